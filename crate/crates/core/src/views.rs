//! The two decoupled representations of a chunk.
//!
//! A [`RetrievalView`] enriches the chunk with multi-granular context and
//! document metadata and is only ever embedded and searched. A
//! [`GenerationView`] is the bare chunk text and is the only thing a
//! generator prompt ever sees.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{detokenize, extract_metadata, tokenize, Chunk, ChunkedDocument, ChunkingConfig};
use crate::error::{Error, Result};
use crate::par::{self, Execution};

pub const META_MARKER: &str = "[META]";
pub const CTX_MARKER: &str = "[CTX]";
pub const CHUNK_MARKER: &str = "[CHUNK]";

/// Document-global metadata as seen from one chunk.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metadata {
    pub title: String,
    pub abstract_text: Option<String>,
    pub keywords: Vec<String>,
    pub section_path: Vec<String>,
    pub extra: BTreeMap<String, String>,
}

impl Metadata {
    /// `label: value` fields in fixed rendering order, empty ones skipped.
    fn fields(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.title.is_empty() {
            out.push(format!("title: {}", self.title));
        }
        if !self.section_path.is_empty() {
            out.push(format!("section: {}", self.section_path.join(" > ")));
        }
        if !self.keywords.is_empty() {
            out.push(format!("keywords: {}", self.keywords.join(", ")));
        }
        if let Some(a) = self.abstract_text.as_deref().filter(|a| !a.is_empty()) {
            out.push(format!("abstract: {a}"));
        }
        for (k, v) in &self.extra {
            out.push(format!("{k}: {v}"));
        }
        out
    }

    /// Metadata rendered without the segment marker (embedding fusion input).
    pub fn render(&self) -> String {
        self.fields().join(" | ")
    }
}

/// Document lead, section lead and neighbouring chunk texts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextBundle {
    pub doc_lead: String,
    pub section_lead: String,
    /// Preceding chunks in document order (farthest first).
    pub neighbors_before: Vec<String>,
    /// Following chunks in document order (nearest first).
    pub neighbors_after: Vec<String>,
}

impl ContextBundle {
    fn fields(&self) -> Vec<String> {
        [
            self.doc_lead.clone(),
            self.section_lead.clone(),
            self.neighbors_before.join(" "),
            self.neighbors_after.join(" "),
        ]
        .into_iter()
        .filter(|s| !s.is_empty())
        .collect()
    }

    /// Context rendered without the segment marker (embedding fusion input).
    pub fn render(&self) -> String {
        self.fields().join(" || ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    #[default]
    Text,
    Embedding,
}

impl FromStr for FusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Self::Text),
            "embedding" => Ok(Self::Embedding),
            other => Err(Error::Param(format!("unknown fusion mode `{other}`"))),
        }
    }
}

/// Chunk representation method compared in experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Bare chunk for both retrieval and generation.
    Naive,
    /// Enriched retrieval view, bare generation view.
    #[serde(rename = "heterag")]
    HeteRag,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::HeteRag => "heterag",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Self::Naive),
            "heterag" => Ok(Self::HeteRag),
            other => Err(Error::Param(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViewConfig {
    pub use_context: bool,
    pub use_metadata: bool,
    pub fusion_mode: FusionMode,
    pub token_budget: usize,
    pub doc_lead_tokens: usize,
    pub section_lead_tokens: usize,
    /// (chunk, context, metadata) weights for embedding fusion.
    pub fusion_weights: (f64, f64, f64),
}

impl Default for ViewConfig {
    fn default() -> Self {
        Self {
            use_context: true,
            use_metadata: true,
            fusion_mode: FusionMode::Text,
            token_budget: 512,
            doc_lead_tokens: 64,
            section_lead_tokens: 32,
            fusion_weights: (1.0, 0.5, 0.5),
        }
    }
}

impl ViewConfig {
    /// The naive-RAG configuration: the retrieval view is the bare chunk.
    pub fn naive() -> Self {
        Self {
            use_context: false,
            use_metadata: false,
            fusion_mode: FusionMode::Text,
            ..Self::default()
        }
    }

    /// The effective configuration for `method`; `Naive` ignores the flags.
    pub fn for_method(&self, method: Method) -> Self {
        match method {
            Method::Naive => Self {
                use_context: false,
                use_metadata: false,
                fusion_mode: FusionMode::Text,
                ..self.clone()
            },
            Method::HeteRag => self.clone(),
        }
    }

    pub fn validate(&self, chunking: &ChunkingConfig) -> Result<()> {
        if self.token_budget < chunking.chunk_size {
            return Err(Error::Param(format!(
                "token_budget {} is smaller than chunk_size {}",
                self.token_budget, chunking.chunk_size
            )));
        }
        let (wc, wx, wm) = self.fusion_weights;
        if !(wc > 0.0) || !(wx >= 0.0) || !(wm >= 0.0) || ![wc, wx, wm].iter().all(|w| w.is_finite()) {
            return Err(Error::Param(format!(
                "fusion weights must be finite and non-negative with w_chunk > 0, got {:?}",
                self.fusion_weights
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalView {
    pub chunk_id: String,
    pub doc_id: String,
    pub chunk_text: String,
    pub context: Option<ContextBundle>,
    pub metadata: Option<Metadata>,
    /// Present in text fusion mode only.
    pub rendered_text: Option<String>,
}

impl RetrievalView {
    /// Renders the composite text through the fixed template. Segments with
    /// nothing to show are omitted; with no context and no metadata this is
    /// exactly the chunk text.
    pub fn render(&self) -> String {
        let meta = self.metadata.as_ref().map(Metadata::fields).unwrap_or_default();
        let ctx = self.context.as_ref().map(ContextBundle::fields).unwrap_or_default();
        if meta.is_empty() && ctx.is_empty() {
            return self.chunk_text.clone();
        }
        let mut lines = Vec::with_capacity(3);
        if !meta.is_empty() {
            lines.push(format!("{META_MARKER} {}", meta.join(" | ")));
        }
        if !ctx.is_empty() {
            lines.push(format!("{CTX_MARKER} {}", ctx.join(" || ")));
        }
        lines.push(format!("{CHUNK_MARKER} {}", self.chunk_text));
        lines.join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationView {
    pub chunk_id: String,
    pub text: String,
}

fn lead(tokens: impl Iterator<Item = impl AsRef<str>>, n: usize) -> String {
    tokens.take(n).map(|t| t.as_ref().to_string()).collect::<Vec<_>>().join(" ")
}

pub fn build_context(
    doc: &ChunkedDocument,
    chunk: &Chunk,
    cfg: &ViewConfig,
    chunking: &ChunkingConfig,
) -> ContextBundle {
    let i = chunk.index_in_doc;
    let r = chunking.neighbor_radius;
    let texts = |range: std::ops::Range<usize>| -> Vec<String> {
        doc.chunks
            .iter()
            .filter(|c| range.contains(&c.index_in_doc))
            .map(|c| c.text.clone())
            .collect()
    };
    let section = doc.section_tokens.get(chunk.section_index);
    ContextBundle {
        doc_lead: lead(doc.doc_tokens(), cfg.doc_lead_tokens),
        section_lead: section
            .map(|s| lead(s.iter(), cfg.section_lead_tokens))
            .unwrap_or_default(),
        neighbors_before: texts(i.saturating_sub(r)..i),
        neighbors_after: texts(i + 1..i.saturating_add(r).saturating_add(1)),
    }
}

pub fn build_retrieval_view(
    doc: &ChunkedDocument,
    chunk: &Chunk,
    cfg: &ViewConfig,
    chunking: &ChunkingConfig,
) -> Result<RetrievalView> {
    let context = cfg.use_context.then(|| build_context(doc, chunk, cfg, chunking));
    let metadata = if cfg.use_metadata {
        Some(extract_metadata(&doc.doc, chunk)?)
    } else {
        None
    };
    let view = RetrievalView {
        chunk_id: chunk.chunk_id.clone(),
        doc_id: chunk.doc_id.clone(),
        chunk_text: chunk.text.clone(),
        context,
        metadata,
        rendered_text: None,
    };
    match cfg.fusion_mode {
        FusionMode::Text => truncate_to_budget(view, cfg.token_budget),
        FusionMode::Embedding => Ok(view),
    }
}

/// Removes whole components until the rendered view fits `budget` tokens.
///
/// Drop order: document lead, section lead, neighbours from the farthest
/// distance inwards, extra metadata, abstract, keywords, section path,
/// title. Only then is the chunk text itself cut, to `budget` tokens.
pub fn truncate_to_budget(mut view: RetrievalView, budget: usize) -> Result<RetrievalView> {
    if budget < 1 {
        return Err(Error::Param("token budget must be at least 1".into()));
    }
    loop {
        let rendered = view.render();
        if tokenize(&rendered).len() <= budget {
            view.rendered_text = Some(rendered);
            return Ok(view);
        }
        if !drop_lowest_priority(&mut view) {
            let tokens = tokenize(&view.chunk_text);
            view.rendered_text = Some(detokenize(&tokens[..budget.min(tokens.len())]));
            return Ok(view);
        }
    }
}

fn drop_lowest_priority(view: &mut RetrievalView) -> bool {
    if let Some(ctx) = view.context.as_mut() {
        if !ctx.doc_lead.is_empty() {
            ctx.doc_lead.clear();
            return true;
        }
        if !ctx.section_lead.is_empty() {
            ctx.section_lead.clear();
            return true;
        }
        let dist = ctx.neighbors_before.len().max(ctx.neighbors_after.len());
        if dist > 0 {
            if ctx.neighbors_before.len() == dist {
                ctx.neighbors_before.remove(0);
            }
            if ctx.neighbors_after.len() == dist {
                ctx.neighbors_after.pop();
            }
            return true;
        }
    }
    if let Some(meta) = view.metadata.as_mut() {
        if let Some(key) = meta.extra.keys().next_back().cloned() {
            meta.extra.remove(&key);
            return true;
        }
        if meta.abstract_text.take().is_some_and(|a| !a.is_empty()) {
            return true;
        }
        if !meta.keywords.is_empty() {
            meta.keywords.clear();
            return true;
        }
        if !meta.section_path.is_empty() {
            meta.section_path.clear();
            return true;
        }
        if !meta.title.is_empty() {
            meta.title.clear();
            return true;
        }
    }
    false
}

pub fn build_generation_view(chunk: &Chunk) -> GenerationView {
    GenerationView {
        chunk_id: chunk.chunk_id.clone(),
        text: chunk.text.clone(),
    }
}

/// Retrieval views for every chunk of a corpus, in corpus order.
pub fn build_corpus_views(
    docs: &[ChunkedDocument],
    cfg: &ViewConfig,
    chunking: &ChunkingConfig,
    exec: Execution,
) -> Result<Vec<RetrievalView>> {
    cfg.validate(chunking)?;
    let refs: Vec<(usize, usize)> = docs
        .iter()
        .enumerate()
        .flat_map(|(d, doc)| (0..doc.chunks.len()).map(move |c| (d, c)))
        .collect();
    par::try_map(exec, &refs, |&(d, c)| {
        build_retrieval_view(&docs[d], &docs[d].chunks[c], cfg, chunking)
    })
}
