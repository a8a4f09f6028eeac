//! Dense text embeddings: pluggable embedders, per-level adapters, fusion
//! and similarity.

mod adapter;
mod hash;
mod remote;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adapter::{
    apply_adapter, load_adapter, read_adapter, save_adapter, write_adapter, AdapterParams, LevelAdapter,
    ADAPTER_MAGIC, DEFAULT_TEMPERATURE,
};
pub use hash::{fnv1a64, hash_embed, HashEmbedder};
pub use remote::RemoteEmbedder;

/// Hierarchy level a text (or vector) belongs to. Each level has its own
/// instruction prefix and its own adapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Query,
    Chunk,
    Context,
    Metadata,
    View,
}

impl Level {
    pub const ALL: [Level; 5] = [Level::Query, Level::Chunk, Level::Context, Level::Metadata, Level::View];

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Query => "query",
            Level::Chunk => "chunk",
            Level::Context => "context",
            Level::Metadata => "metadata",
            Level::View => "view",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A dense vector. Everything the embedders, adapters and fusion return is
/// unit-norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Wraps raw values without normalizing.
    pub fn from_raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    /// L2-normalizes `values`; errors on a zero or non-finite vector.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self> {
        let n = l2_norm(&values);
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Numerical(format!(
                "cannot normalize vector with norm {n}"
            )));
        }
        values.iter_mut().for_each(|x| *x /= n);
        Ok(Self(values))
    }

    /// Unit basis vector e_i.
    pub fn basis(dim: usize, i: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        Self(v)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    #[default]
    Hash,
    Remote,
}

impl FromStr for EmbedderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hash" => Ok(Self::Hash),
            "remote" => Ok(Self::Remote),
            other => Err(Error::Param(format!("unknown embedder kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderSpec {
    pub kind: EmbedderKind,
    pub dimension: usize,
    pub max_tokens: usize,
    pub endpoint: Option<String>,
    /// Hard textual instructions prepended per level before embedding.
    pub instruction_prefixes: BTreeMap<Level, String>,
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::Hash,
            dimension: 384,
            max_tokens: 512,
            endpoint: None,
            instruction_prefixes: BTreeMap::new(),
        }
    }
}

impl EmbedderSpec {
    pub fn hash(dimension: usize) -> Self {
        Self {
            dimension,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension < 2 {
            return Err(Error::Param("embedding dimension must be at least 2".into()));
        }
        if self.max_tokens < 1 {
            return Err(Error::Param("max_tokens must be at least 1".into()));
        }
        if self.kind == EmbedderKind::Remote && self.endpoint.is_none() {
            return Err(Error::Param("remote embedder requires an endpoint".into()));
        }
        Ok(())
    }

    /// Short identifier used as the embedder column in reports.
    pub fn label(&self) -> String {
        match self.kind {
            EmbedderKind::Hash => format!("hash-{}", self.dimension),
            EmbedderKind::Remote => format!("remote-{}", self.dimension),
        }
    }

    pub fn build(&self) -> Result<Box<dyn Embedder>> {
        self.validate()?;
        Ok(match self.kind {
            EmbedderKind::Hash => Box::new(HashEmbedder::from_spec(self)),
            EmbedderKind::Remote => Box::new(RemoteEmbedder::from_spec(self)?),
        })
    }
}

/// Maps texts of one hierarchy level to unit-norm vectors.
pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;

    /// One vector per text, in input order.
    fn embed(&self, level: Level, texts: &[String]) -> Result<Vec<EmbeddingVector>>;
}

pub(crate) fn with_prefix(prefixes: &BTreeMap<Level, String>, level: Level, text: &str) -> String {
    match prefixes.get(&level) {
        Some(p) if !p.is_empty() => format!("{p} {text}"),
        _ => text.to_string(),
    }
}

pub fn embed_texts(spec: &EmbedderSpec, level: Level, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
    spec.build()?.embed(level, texts)
}

/// normalize(w_c·chunk + w_x·ctx + w_m·meta); absent parts contribute zero.
/// A lone chunk vector is returned unchanged.
pub fn fuse_embeddings(
    weights: (f64, f64, f64),
    chunk: &EmbeddingVector,
    context: Option<&EmbeddingVector>,
    metadata: Option<&EmbeddingVector>,
) -> Result<EmbeddingVector> {
    let (wc, wx, wm) = weights;
    if !(wc > 0.0) || !(wx >= 0.0) || !(wm >= 0.0) {
        return Err(Error::Param(format!("invalid fusion weights {weights:?}")));
    }
    if context.is_none() && metadata.is_none() {
        return Ok(chunk.clone());
    }
    let mut acc: Vec<f64> = chunk.values().iter().map(|x| wc * x).collect();
    for (w, part) in [(wx, context), (wm, metadata)] {
        if let Some(p) = part {
            if p.dim() != acc.len() {
                return Err(Error::Contract(format!(
                    "fusion dimension mismatch: {} vs {}",
                    p.dim(),
                    acc.len()
                )));
            }
            acc.iter_mut().zip(p.values()).for_each(|(a, x)| *a += w * x);
        }
    }
    EmbeddingVector::normalized(acc)
}

pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Contract(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let (na, nb) = (a.norm(), b.norm());
    if !(na > 0.0) || !(nb > 0.0) {
        return Err(Error::Numerical("cosine of a zero vector".into()));
    }
    Ok(dot(a.values(), b.values()) / (na * nb))
}

/// Cosine similarity divided by the temperature.
pub fn scaled_similarity(q: &EmbeddingVector, e: &EmbeddingVector, temperature: f64) -> Result<f64> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::Param(format!("temperature must be positive, got {temperature}")));
    }
    Ok(cosine(q, e)? / temperature)
}
