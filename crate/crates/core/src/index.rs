//! Exact flat vector index with cosine top-k search.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingVector;
use crate::error::{Error, Result};
use crate::par::{self, Execution};

pub const INDEX_MAGIC: &[u8; 8] = b"HRAGIDX1";

/// Provenance of an index; stored next to the index file, not inside it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildInfo {
    pub corpus_hash: String,
    pub view_config_hash: String,
    pub embedder: String,
    pub method: crate::views::Method,
    /// Hash of the adapter file applied to the view vectors, if any.
    pub adapter_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub chunk_id: String,
    pub doc_id: String,
    pub score: f64,
}

/// Immutable collection of `(chunk_id, doc_id, vector)` entries. Vectors are
/// stored as f32, the on-disk precision, so save/load is lossless.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    chunk_ids: Vec<String>,
    doc_ids: Vec<String>,
    vectors: Vec<f32>,
    norms: Vec<f64>,
    pub build_info: Option<BuildInfo>,
}

/// Ranking order: score descending, then chunk_id ascending.
fn rank_cmp(a: (f64, &str), b: (f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

impl VectorIndex {
    pub fn build(dim: usize, ids: &[(String, String)], vectors: &[EmbeddingVector]) -> Result<Self> {
        if ids.len() != vectors.len() {
            return Err(Error::Contract(format!(
                "{} ids but {} vectors",
                ids.len(),
                vectors.len()
            )));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        let mut flat = Vec::with_capacity(ids.len() * dim);
        for ((chunk_id, _), v) in ids.iter().zip(vectors) {
            if !seen.insert(chunk_id.as_str()) {
                return Err(Error::DuplicateId(chunk_id.clone()));
            }
            if v.dim() != dim {
                return Err(Error::Contract(format!(
                    "vector for `{chunk_id}` has dimension {}, index has {dim}",
                    v.dim()
                )));
            }
            flat.extend(v.values().iter().map(|&x| x as f32));
        }
        Ok(Self::from_parts(
            dim,
            ids.iter().map(|(c, _)| c.clone()).collect(),
            ids.iter().map(|(_, d)| d.clone()).collect(),
            flat,
        ))
    }

    fn from_parts(dim: usize, chunk_ids: Vec<String>, doc_ids: Vec<String>, vectors: Vec<f32>) -> Self {
        let norms = if dim == 0 {
            vec![0.0; chunk_ids.len()]
        } else {
            vectors
                .chunks_exact(dim)
                .map(|v| v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt())
                .collect()
        };
        Self {
            dim,
            chunk_ids,
            doc_ids,
            vectors,
            norms,
            build_info: None,
        }
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.chunk_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunk_ids.is_empty()
    }

    /// Entries in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, &[f32])> {
        self.chunk_ids
            .iter()
            .zip(&self.doc_ids)
            .enumerate()
            .map(|(i, (c, d))| (c.as_str(), d.as_str(), &self.vectors[i * self.dim..(i + 1) * self.dim]))
    }

    /// Cosine similarity of `q` against every entry, in insertion order.
    /// Zero-norm entries score 0.
    pub fn scores_with(&self, q: &EmbeddingVector, exec: Execution) -> Result<Vec<f64>> {
        if q.dim() != self.dim {
            return Err(Error::Contract(format!(
                "query dimension {} does not match index dimension {}",
                q.dim(),
                self.dim
            )));
        }
        let qn = q.norm();
        if !(qn > 0.0) {
            return Err(Error::Numerical("zero query vector".into()));
        }
        let qv = q.values();
        Ok(par::map_range(exec, self.len(), |i| {
            let row = &self.vectors[i * self.dim..(i + 1) * self.dim];
            let n = self.norms[i];
            if n == 0.0 {
                return 0.0;
            }
            let d: f64 = row.iter().zip(qv).map(|(&e, &x)| f64::from(e) * x).sum();
            d / (qn * n)
        }))
    }

    pub fn search_topk(&self, q: &EmbeddingVector, k: usize) -> Result<Vec<SearchResult>> {
        self.search_topk_with(q, k, Execution::default_for_build())
    }

    /// Exact top-k by cosine similarity.
    pub fn search_topk_with(&self, q: &EmbeddingVector, k: usize, exec: Execution) -> Result<Vec<SearchResult>> {
        if k < 1 {
            return Err(Error::Param("k must be at least 1".into()));
        }
        let scores = self.scores_with(q, exec)?;
        let mut order: Vec<usize> = (0..self.len()).collect();
        let cmp = |&a: &usize, &b: &usize| {
            rank_cmp((scores[a], &self.chunk_ids[a]), (scores[b], &self.chunk_ids[b]))
        };
        if k < order.len() {
            order.select_nth_unstable_by(k - 1, cmp);
            order.truncate(k);
        }
        order.sort_unstable_by(cmp);
        Ok(order
            .into_iter()
            .map(|i| SearchResult {
                chunk_id: self.chunk_ids[i].clone(),
                doc_id: self.doc_ids[i].clone(),
                score: scores[i],
            })
            .collect())
    }

    /// Binary layout: magic, dimension (u32 LE), count (u64 LE), then per
    /// entry the u32-length-prefixed chunk_id and doc_id and `dimension`
    /// little-endian f32 values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.vectors.len() * 4 + self.len() * 24);
        out.extend_from_slice(INDEX_MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for (chunk_id, doc_id, v) in self.iter() {
            for s in [chunk_id, doc_id] {
                out.extend_from_slice(&(s.len() as u32).to_le_bytes());
                out.extend_from_slice(s.as_bytes());
            }
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], source: &str) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, source };
        if r.take(8)? != INDEX_MAGIC {
            return Err(r.err("missing HRAGIDX1 header"));
        }
        let dim = r.u32()? as usize;
        let count = r.u64()? as usize;
        let mut chunk_ids = Vec::new();
        let mut doc_ids = Vec::new();
        let mut vectors = Vec::new();
        let mut seen = HashSet::new();
        for _ in 0..count {
            let c = r.string()?;
            if !seen.insert(c.clone()) {
                return Err(Error::DuplicateId(c));
            }
            chunk_ids.push(c);
            doc_ids.push(r.string()?);
            let raw = r.take(dim * 4)?;
            vectors.extend(raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())));
        }
        if r.pos != bytes.len() {
            return Err(r.err("trailing bytes after last entry"));
        }
        Ok(Self::from_parts(dim, chunk_ids, doc_ids, vectors))
    }

    /// Writes the index file, plus `<path>.meta.json` when build info is set.
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        if let Some(info) = &self.build_info {
            fs::write(meta_path(path), serde_json::to_string_pretty(info)? + "\n")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let mut idx = Self::from_bytes(&fs::read(path)?, &path.display().to_string())?;
        let meta = meta_path(path);
        if meta.exists() {
            idx.build_info = Some(serde_json::from_str(&fs::read_to_string(meta)?)?);
        }
        Ok(idx)
    }
}

pub fn meta_path(index_path: &Path) -> PathBuf {
    let mut s = index_path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    source: &'a str,
}

impl<'a> Reader<'a> {
    fn err(&self, message: &str) -> Error {
        Error::Format {
            path: self.source.to_string(),
            message: format!("{message} (offset {})", self.pos),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| self.err("unexpected end of file"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.err("invalid UTF-8 in id"))
    }
}

pub fn build_index(dim: usize, ids: &[(String, String)], vectors: &[EmbeddingVector]) -> Result<VectorIndex> {
    VectorIndex::build(dim, ids, vectors)
}

/// Keeps the first (best-ranked) result of every document.
pub fn dedup_by_document(results: &[SearchResult]) -> Vec<SearchResult> {
    let mut seen = HashSet::new();
    results
        .iter()
        .filter(|r| seen.insert(r.doc_id.as_str()))
        .cloned()
        .collect()
}
