use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use heterag::app::{self, RunConfig};
use heterag::embed::EmbedderKind;
use heterag::views::{FusionMode, Method};

/// Heterogeneous retrieval-augmented generation experiments.
///
/// Settings come from the TOML file given with --config (or built-in
/// defaults); any flag given on the command line overrides the file.
#[derive(Parser, Debug)]
#[command(name = "heterag", version, about)]
struct Cli {
    /// Run configuration file (TOML). Relative paths inside it resolve
    /// against the file's directory.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Seed for batch sampling and any other randomness.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Chunk size in tokens; also restricts the retrieval eval grid to this size.
    #[arg(long, global = true, value_name = "N")]
    chunk_size: Option<usize>,

    /// Passages retrieved per question (and result count for `search`).
    #[arg(long, global = true, value_name = "N")]
    top_k: Option<usize>,

    /// Retrieval method; for eval-retrieval it restricts the grid to this method.
    #[arg(long, global = true, value_enum)]
    method: Option<MethodArg>,

    /// How retrieval views are fused before scoring.
    #[arg(long, global = true, value_enum)]
    fusion: Option<FusionArg>,

    /// Leave the context block out of retrieval views.
    #[arg(long, global = true)]
    no_context: bool,

    /// Leave the metadata block out of retrieval views.
    #[arg(long, global = true)]
    no_metadata: bool,

    /// Embedding backend.
    #[arg(long, global = true, value_enum)]
    embedder: Option<EmbedderArg>,

    /// Model server base URL, used by the remote embedder and the remote generator.
    #[arg(long, global = true, value_name = "URL")]
    endpoint: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse the corpus and write the chunk store.
    Ingest,
    /// Build retrieval views, embed them and write the vector index.
    Index,
    /// Query the index and print the top results.
    Search {
        /// Query text.
        query: String,
        /// Number of results; falls back to --top-k, then the configured top_k.
        #[arg(short)]
        k: Option<usize>,
    },
    /// Train embedding adapters and write the adapter file and loss curve.
    Train,
    /// Run the retrieval grid and write nDCG reports.
    EvalRetrieval,
    /// Run retrieval-augmented QA and write EM/F1/recall reports.
    EvalRag,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum MethodArg {
    Naive,
    Heterag,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum FusionArg {
    Text,
    Embedding,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum EmbedderArg {
    Hash,
    Remote,
}

fn build_config(cli: &Cli) -> heterag::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(n) = cli.chunk_size {
        cfg.chunking.chunk_size = n;
        cfg.eval.chunk_sizes = vec![n];
    }
    if let Some(k) = cli.top_k {
        cfg.rag.top_k = k;
        cfg.eval.qa_top_ks = vec![k];
    }
    if let Some(m) = cli.method {
        let m = match m {
            MethodArg::Naive => Method::Naive,
            MethodArg::Heterag => Method::HeteRag,
        };
        cfg.method = m;
        cfg.eval.methods = vec![m];
    }
    if let Some(f) = cli.fusion {
        cfg.views.fusion_mode = match f {
            FusionArg::Text => FusionMode::Text,
            FusionArg::Embedding => FusionMode::Embedding,
        };
    }
    if cli.no_context {
        cfg.views.use_context = false;
    }
    if cli.no_metadata {
        cfg.views.use_metadata = false;
    }
    if let Some(e) = cli.embedder {
        cfg.embedder.kind = match e {
            EmbedderArg::Hash => EmbedderKind::Hash,
            EmbedderArg::Remote => EmbedderKind::Remote,
        };
    }
    if let Some(url) = &cli.endpoint {
        cfg.embedder.endpoint = Some(url.clone());
        cfg.generator.endpoint = Some(url.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> heterag::Result<String> {
    let cfg = build_config(cli)?;
    match &cli.command {
        Command::Ingest => app::cmd_ingest(&cfg),
        Command::Index => app::cmd_index(&cfg),
        Command::Search { query, k } => {
            let k = k.or(cli.top_k).unwrap_or(cfg.rag.top_k);
            app::cmd_search(&cfg, query, k)
        }
        Command::Train => app::cmd_train(&cfg),
        Command::EvalRetrieval => app::cmd_eval_retrieval(&cfg),
        Command::EvalRag => app::cmd_eval_rag(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
