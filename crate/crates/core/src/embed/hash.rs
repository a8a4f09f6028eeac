use std::collections::BTreeMap;

use super::{with_prefix, Embedder, EmbedderSpec, EmbeddingVector, Level};
use crate::corpus::tokenize;
use crate::error::{Error, Result};
use crate::par::{self, Execution};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

fn accumulate<'a>(tokens: impl Iterator<Item = &'a str>, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for tok in tokens {
        let h = fnv1a64(tok.as_bytes());
        let bucket = (h % dim as u64) as usize;
        v[bucket] += if h >> 63 == 1 { -1.0 } else { 1.0 };
    }
    v
}

fn finish(v: Vec<f64>) -> EmbeddingVector {
    let dim = v.len();
    EmbeddingVector::normalized(v).unwrap_or_else(|_| EmbeddingVector::basis(dim, 0))
}

/// Signed feature hashing over tokens, L2-normalized. A text whose buckets
/// cancel out (or that has no tokens) maps to e₀.
pub fn hash_embed(text: &str, dim: usize) -> EmbeddingVector {
    assert!(dim >= 2, "hash_embed needs dim >= 2");
    let tokens = tokenize(text);
    finish(accumulate(tokens.iter().map(String::as_str), dim))
}

/// Deterministic bag-of-tokens embedder; needs no model.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    max_tokens: usize,
    prefixes: BTreeMap<Level, String>,
    exec: Execution,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Param("embedding dimension must be at least 2".into()));
        }
        Ok(Self {
            dim,
            max_tokens: usize::MAX,
            prefixes: BTreeMap::new(),
            exec: Execution::default_for_build(),
        })
    }

    pub fn from_spec(spec: &EmbedderSpec) -> Self {
        Self {
            dim: spec.dimension,
            max_tokens: spec.max_tokens,
            prefixes: spec.instruction_prefixes.clone(),
            exec: Execution::default_for_build(),
        }
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    fn embed_one(&self, level: Level, text: &str) -> EmbeddingVector {
        let text = with_prefix(&self.prefixes, level, text);
        let tokens = tokenize(&text);
        let n = tokens.len().min(self.max_tokens);
        finish(accumulate(tokens[..n].iter().map(String::as_str), self.dim))
    }
}

impl Embedder for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, level: Level, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        Ok(par::map(self.exec, texts, |t| self.embed_one(level, t)))
    }
}
