//! Reproducible experiment commands over a [`RunConfig`].
//!
//! Each command reads its inputs from the configured paths, writes its
//! artifacts, and returns the human-readable summary the CLI prints.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{
    chunk_document, parse_corpus, read_chunk_store, write_chunk_store, Chunk, ChunkedDocument, ChunkingConfig,
    Document,
};
use crate::embed::{load_adapter, save_adapter, AdapterParams, EmbedderSpec, Level};
use crate::encoding::encode_views;
use crate::error::{Error, Result};
use crate::eval::{run_qa_eval, run_retrieval_eval, QaRecord, Qrels, Query, RetrievalGrid};
use crate::index::{BuildInfo, VectorIndex};
use crate::io::{content_hash, read_jsonl};
use crate::par::{self, Execution};
use crate::rag::{GeneratorSpec, Pipeline, RagConfig};
use crate::tuning::{loss_csv, parse_training_pairs, train_adapter, TrainConfig};
use crate::views::{build_corpus_views, build_generation_view, Method, ViewConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    pub chunks: PathBuf,
    pub queries: PathBuf,
    pub qrels: PathBuf,
    pub qa: PathBuf,
    pub train_pairs: PathBuf,
    pub index: PathBuf,
    pub adapter: PathBuf,
    pub loss_csv: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            corpus: "corpus.jsonl".into(),
            chunks: "out/chunks.jsonl".into(),
            queries: "queries.jsonl".into(),
            qrels: "qrels.tsv".into(),
            qa: "qa.jsonl".into(),
            train_pairs: "train.jsonl".into(),
            index: "out/index.bin".into(),
            adapter: "out/adapter.bin".into(),
            loss_csv: "out/loss.csv".into(),
            report_dir: "out/reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub chunk_sizes: Vec<usize>,
    pub methods: Vec<Method>,
    pub ndcg_ks: Vec<usize>,
    /// Retrieval depths for `eval-rag`; empty means `rag.top_k` only.
    pub qa_top_ks: Vec<usize>,
    pub dataset: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            chunk_sizes: vec![16, 32, 64, 128],
            methods: vec![Method::Naive, Method::HeteRag],
            ndcg_ks: vec![1, 10],
            qa_top_ks: Vec::new(),
            dataset: "default".into(),
        }
    }
}

/// Everything a command needs. Relative paths resolve against `base_dir`
/// (the config file's directory, or the working directory).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub method: Method,
    /// Apply the trained adapter file when indexing and evaluating.
    pub use_adapter: bool,
    pub paths: Paths,
    pub chunking: ChunkingConfig,
    pub views: ViewConfig,
    pub embedder: EmbedderSpec,
    pub train: TrainConfig,
    pub rag: RagConfig,
    pub generator: GeneratorSpec,
    pub eval: EvalConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            method: Method::HeteRag,
            use_adapter: false,
            paths: Paths::default(),
            chunking: ChunkingConfig::default(),
            views: ViewConfig::default(),
            embedder: EmbedderSpec::default(),
            train: TrainConfig::default(),
            rag: RagConfig::default(),
            generator: GeneratorSpec::default(),
            eval: EvalConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Param(format!("config: {e}")))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&fs::read_to_string(path)?, &base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.chunking.validate()?;
        self.views.validate(&self.chunking)?;
        self.embedder.validate()?;
        self.rag.validate()?;
        self.generator.validate()?;
        Ok(())
    }

    fn effective_view(&self) -> ViewConfig {
        self.views.for_method(self.method)
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    fn input(&self, p: &Path) -> Result<PathBuf> {
        let full = self.resolve(p);
        if full.exists() {
            Ok(full)
        } else {
            Err(Error::MissingArtifact(full))
        }
    }
}

fn write_output(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Corpus plus the stored chunks, checked against the current chunking.
fn load_chunked(cfg: &RunConfig) -> Result<(Vec<ChunkedDocument>, String)> {
    let corpus_path = cfg.input(&cfg.paths.corpus)?;
    let docs = parse_corpus(&corpus_path)?;
    let corpus_hash = content_hash(&fs::read(&corpus_path)?);
    let store_path = cfg.input(&cfg.paths.chunks)?;
    let stored = read_chunk_store(&store_path)?;
    let chunked = group_chunks(docs, stored, &cfg.chunking, &store_path)?;
    Ok((chunked, corpus_hash))
}

fn group_chunks(docs: Vec<Document>, stored: Vec<Chunk>, chunking: &ChunkingConfig, store_path: &Path) -> Result<Vec<ChunkedDocument>> {
    let mut stored = stored.into_iter().peekable();
    let mut out = Vec::with_capacity(docs.len());
    for doc in docs {
        let mut chunks = Vec::new();
        while let Some(c) = stored.next_if(|c| c.doc_id == doc.doc_id) {
            chunks.push(c);
        }
        if chunks != chunk_document(&doc, chunking) {
            return Err(Error::Contract(format!(
                "chunk store {} does not match document `{}` at chunk_size {}; rerun `ingest`",
                store_path.display(),
                doc.doc_id,
                chunking.chunk_size
            )));
        }
        out.push(ChunkedDocument::with_chunks(doc, chunks));
    }
    if let Some(c) = stored.next() {
        return Err(Error::Contract(format!(
            "chunk store has chunk `{}` for unknown or out-of-order document",
            c.chunk_id
        )));
    }
    Ok(out)
}

fn load_adapter_if_enabled(cfg: &RunConfig) -> Result<Option<(AdapterParams, String)>> {
    if !cfg.use_adapter {
        return Ok(None);
    }
    let path = cfg.input(&cfg.paths.adapter)?;
    let bytes = fs::read(&path)?;
    let params = load_adapter(&path)?;
    Ok(Some((params, content_hash(&bytes))))
}

pub fn cmd_ingest(cfg: &RunConfig) -> Result<String> {
    cfg.chunking.validate()?;
    let docs = parse_corpus(&cfg.input(&cfg.paths.corpus)?)?;
    let chunks: Vec<Chunk> = docs
        .iter()
        .flat_map(|d| chunk_document(d, &cfg.chunking))
        .collect();
    write_output(&cfg.resolve(&cfg.paths.chunks), write_chunk_store(&chunks)?)?;
    Ok(format!("documents: {}\nchunks: {}\n", docs.len(), chunks.len()))
}

pub fn cmd_index(cfg: &RunConfig) -> Result<String> {
    cfg.validate()?;
    let (chunked, corpus_hash) = load_chunked(cfg)?;
    let adapter = load_adapter_if_enabled(cfg)?;
    let view_cfg = cfg.effective_view();
    let exec = Execution::default_for_build();
    let views = build_corpus_views(&chunked, &view_cfg, &cfg.chunking, exec)?;
    let embedder = cfg.embedder.build()?;
    let reprs = encode_views(&views, embedder.as_ref(), &view_cfg)?;
    let params = adapter.as_ref().map(|(p, _)| p);
    let vectors = par::try_map(exec, &reprs, |r| r.finalize(params))?;
    let ids: Vec<(String, String)> = views.iter().map(|v| (v.chunk_id.clone(), v.doc_id.clone())).collect();
    let mut index = VectorIndex::build(embedder.dimension(), &ids, &vectors)?;
    index.build_info = Some(BuildInfo {
        corpus_hash,
        view_config_hash: content_hash(serde_json::to_string(&(&view_cfg, &cfg.chunking))?.as_bytes()),
        embedder: cfg.embedder.label(),
        method: cfg.method,
        adapter_hash: adapter.map(|(_, h)| h),
    });
    let path = cfg.resolve(&cfg.paths.index);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    index.save(&path)?;
    Ok(format!(
        "indexed: {} chunks\ndimension: {}\nmethod: {}\n",
        index.len(),
        index.dimension(),
        cfg.method
    ))
}

/// Loads the index and the query adapter it was built with, checking that
/// the current embedder matches.
fn load_index_for_queries(cfg: &RunConfig) -> Result<(VectorIndex, Option<AdapterParams>)> {
    let index = VectorIndex::load(&cfg.resolve(&cfg.paths.index))?;
    let info = index.build_info.clone().ok_or_else(|| {
        Error::MissingArtifact(crate::index::meta_path(&cfg.resolve(&cfg.paths.index)))
    })?;
    if info.embedder != cfg.embedder.label() {
        return Err(Error::Contract(format!(
            "index was built with embedder `{}`, configured embedder is `{}`",
            info.embedder,
            cfg.embedder.label()
        )));
    }
    let adapter = match info.adapter_hash {
        None => None,
        Some(expected) => {
            let path = cfg.input(&cfg.paths.adapter)?;
            let bytes = fs::read(&path)?;
            if content_hash(&bytes) != expected {
                return Err(Error::Contract(format!(
                    "adapter {} changed since the index was built; rerun `index`",
                    path.display()
                )));
            }
            Some(load_adapter(&path)?)
        }
    };
    Ok((index, adapter))
}

pub fn cmd_search(cfg: &RunConfig, query: &str, k: usize) -> Result<String> {
    cfg.embedder.validate()?;
    let (index, adapter) = load_index_for_queries(cfg)?;
    let embedder = cfg.embedder.build()?;
    let q = embedder.embed(Level::Query, &[query.to_string()])?.remove(0);
    let q = match &adapter {
        Some(p) => p.apply(Level::Query, &q)?,
        None => q,
    };
    let mut out = String::new();
    for (rank, r) in index.search_topk(&q, k)?.iter().enumerate() {
        out.push_str(&format!("{}\t{}\t{}\t{:.6}\n", rank + 1, r.chunk_id, r.doc_id, r.score));
    }
    Ok(out)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<String> {
    cfg.validate()?;
    let pairs = parse_training_pairs(&cfg.resolve(&cfg.paths.train_pairs))?;
    let (chunked, _) = load_chunked(cfg)?;
    let embedder = cfg.embedder.build()?;
    let train_cfg = cfg.train_config();
    let outcome = train_adapter(
        &pairs,
        &chunked,
        embedder.as_ref(),
        &cfg.effective_view(),
        &cfg.chunking,
        &train_cfg,
    )?;
    let adapter_path = cfg.resolve(&cfg.paths.adapter);
    if let Some(dir) = adapter_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_adapter(&outcome.params, &adapter_path)?;
    write_output(&cfg.resolve(&cfg.paths.loss_csv), loss_csv(&outcome.losses))?;
    let mut out = format!("steps: {}\n", outcome.losses.len());
    if let (Some(first), Some(last)) = (outcome.losses.first(), outcome.losses.last()) {
        out.push_str(&format!("initial loss: {first:.6}\nfinal loss: {last:.6}\n"));
    }
    Ok(out)
}

pub fn cmd_eval_retrieval(cfg: &RunConfig) -> Result<String> {
    cfg.validate()?;
    let corpus_path = cfg.input(&cfg.paths.corpus)?;
    let docs = parse_corpus(&corpus_path)?;
    let queries: Vec<Query> = read_jsonl(&cfg.resolve(&cfg.paths.queries))?;
    let qrels = Qrels::load(&cfg.resolve(&cfg.paths.qrels))?;
    let adapter = load_adapter_if_enabled(cfg)?;
    let embedder = cfg.embedder.build()?;
    let grid = RetrievalGrid {
        chunk_sizes: cfg.eval.chunk_sizes.clone(),
        methods: cfg.eval.methods.clone(),
        neighbor_radius: cfg.chunking.neighbor_radius,
        view: cfg.views.clone(),
        ndcg_ks: cfg.eval.ndcg_ks.clone(),
    };
    let report = run_retrieval_eval(
        &docs,
        &queries,
        &qrels,
        &grid,
        embedder.as_ref(),
        &cfg.embedder.label(),
        adapter.as_ref().map(|(p, _)| p),
        Execution::default_for_build(),
    )?;
    let dir = cfg.resolve(&cfg.paths.report_dir);
    let table = report.to_table();
    write_output(&dir.join("retrieval.json"), report.to_json()?)?;
    write_output(&dir.join("retrieval.txt"), &table)?;
    Ok(table)
}

pub fn cmd_eval_rag(cfg: &RunConfig) -> Result<String> {
    cfg.validate()?;
    let records: Vec<QaRecord> = read_jsonl(&cfg.resolve(&cfg.paths.qa))?;
    let (index, adapter) = load_index_for_queries(cfg)?;
    let method = index.build_info.as_ref().map(|b| b.method).unwrap_or(cfg.method);
    let chunks = read_chunk_store(&cfg.input(&cfg.paths.chunks)?)?;
    let pipeline = Pipeline::new(
        index,
        chunks.iter().map(build_generation_view),
        cfg.embedder.build()?,
        adapter,
        cfg.generator.build()?,
        cfg.rag.clone(),
    )?;
    let ks = if cfg.eval.qa_top_ks.is_empty() {
        vec![cfg.rag.top_k]
    } else {
        cfg.eval.qa_top_ks.clone()
    };
    let report = run_qa_eval(&records, &pipeline, &cfg.eval.dataset, method, &ks)?;
    let dir = cfg.resolve(&cfg.paths.report_dir);
    let table = report.to_table();
    write_output(&dir.join("qa.json"), report.to_json()?)?;
    write_output(&dir.join("qa.txt"), &table)?;
    Ok(table)
}
