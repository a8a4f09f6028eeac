//! Contrastive training of the per-level adapters.
//!
//! The loss is InfoNCE over temperature-scaled cosine similarity. Each query
//! in a batch of N is contrasted against the N batch positives (its own and
//! the other queries') plus K chunks drawn uniformly from the rest of the
//! corpus. Gradients are computed analytically through the adapters'
//! normalization, the optional embedding fusion and the cosine.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ChunkedDocument, ChunkingConfig};
use crate::embed::{dot, AdapterParams, Embedder, EmbeddingVector, Level};
use crate::encoding::{encode_views, ChunkRepr};
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::views::{build_corpus_views, ViewConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub query: String,
    pub positive_chunk_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub random_negatives: usize,
    pub temperature: f64,
    pub learning_rate: f64,
    pub steps: usize,
    /// Set from the run-level seed, not from config files.
    #[serde(skip)]
    pub seed: u64,
    /// When false the query adapter stays at identity.
    pub train_query_adapter: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            random_negatives: 8,
            temperature: 0.05,
            learning_rate: 1e-2,
            steps: 100,
            seed: 0,
            train_query_adapter: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Param("batch_size must be at least 1".into()));
        }
        if self.batch_size == 1 && self.random_negatives == 0 {
            return Err(Error::Param("a batch of one needs at least one random negative".into()));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Param("temperature must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Param("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Frozen (pre-adapter) chunk representations addressable by chunk id.
#[derive(Debug, Clone)]
pub struct ChunkPool {
    pub ids: Vec<String>,
    pub reprs: Vec<ChunkRepr>,
    by_id: HashMap<String, usize>,
}

impl ChunkPool {
    pub fn new(ids: Vec<String>, reprs: Vec<ChunkRepr>) -> Result<Self> {
        if ids.len() != reprs.len() {
            return Err(Error::Contract("chunk pool ids and vectors differ in length".into()));
        }
        let mut by_id = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if by_id.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(Self { ids, reprs, by_id })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn position(&self, chunk_id: &str) -> Option<usize> {
        self.by_id.get(chunk_id).copied()
    }
}

/// A training example with its query already embedded (pre-adapter) and its
/// positive resolved to a pool position.
#[derive(Debug, Clone)]
pub struct ResolvedExample {
    pub query: EmbeddingVector,
    pub positive: usize,
}

/// One training batch, holding pre-adapter vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub example_indices: Vec<usize>,
    pub negative_indices: Vec<usize>,
    pub queries: Vec<EmbeddingVector>,
    pub positives: Vec<ChunkRepr>,
    pub negatives: Vec<ChunkRepr>,
}

impl Batch {
    pub fn validate(&self) -> Result<()> {
        if self.queries.is_empty() || self.queries.len() != self.positives.len() {
            return Err(Error::Contract("batch needs N ≥ 1 queries with one positive each".into()));
        }
        if self.queries.len() + self.negatives.len() < 2 {
            return Err(Error::Contract("batch needs at least two candidates".into()));
        }
        Ok(())
    }
}

/// Draws batch `step`: N examples without replacement and K distinct random
/// negatives from the pool, never one of the batch positives. Fully
/// determined by `(cfg.seed, step)`.
pub fn sample_batch(examples: &[ResolvedExample], pool: &ChunkPool, cfg: &TrainConfig, step: u64) -> Result<Batch> {
    let (n, k) = (cfg.batch_size, cfg.random_negatives);
    if examples.len() < n {
        return Err(Error::Param(format!("{} training examples, batch size {n}", examples.len())));
    }
    if pool.len() < n + k {
        return Err(Error::Param(format!(
            "corpus has {} chunks, need at least N + K = {}",
            pool.len(),
            n + k
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(step);
    let example_indices: Vec<usize> = rand::seq::index::sample(&mut rng, examples.len(), n).into_vec();
    let excluded: HashSet<usize> = example_indices.iter().map(|&i| examples[i].positive).collect();
    if pool.len() - excluded.len() < k {
        return Err(Error::Param("not enough non-positive chunks for random negatives".into()));
    }
    let mut negative_indices = Vec::with_capacity(k);
    let mut chosen = HashSet::with_capacity(k);
    while negative_indices.len() < k {
        let c = rng.random_range(0..pool.len());
        if !excluded.contains(&c) && chosen.insert(c) {
            negative_indices.push(c);
        }
    }
    Ok(Batch {
        queries: example_indices.iter().map(|&i| examples[i].query.clone()).collect(),
        positives: example_indices.iter().map(|&i| pool.reprs[examples[i].positive].clone()).collect(),
        negatives: negative_indices.iter().map(|&c| pool.reprs[c].clone()).collect(),
        example_indices,
        negative_indices,
    })
}

/// InfoNCE over a similarity matrix of N rows and N + K columns, where
/// column i of row i is the positive. Uses max-subtracted log-sum-exp.
pub fn infonce_from_similarities(sims: &[Vec<f64>]) -> Result<f64> {
    let n = sims.len();
    if n == 0 {
        return Err(Error::Contract("empty similarity matrix".into()));
    }
    let mut total = 0.0;
    for (i, row) in sims.iter().enumerate() {
        if row.len() < n {
            return Err(Error::Contract("similarity row shorter than batch size".into()));
        }
        if !row.iter().all(|s| s.is_finite()) {
            return Err(Error::Numerical(format!("non-finite similarity in row {i}")));
        }
        total += log_sum_exp(row) - row[i];
    }
    Ok(total / n as f64)
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|s| (s - m).exp()).sum::<f64>().ln()
}

/// InfoNCE for already adapted, unit-norm query/positive/negative vectors.
pub fn infonce_loss(
    queries: &[EmbeddingVector],
    positives: &[EmbeddingVector],
    negatives: &[EmbeddingVector],
    temperature: f64,
) -> Result<f64> {
    if queries.len() != positives.len() {
        return Err(Error::Contract("need one positive per query".into()));
    }
    let sims = queries
        .iter()
        .map(|q| {
            positives
                .iter()
                .chain(negatives)
                .map(|e| crate::embed::scaled_similarity(q, e, temperature))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    infonce_from_similarities(&sims)
}

/// Forward cache for y = normalize(A·x + b).
struct AdaptedVec {
    level: Level,
    input: Vec<f64>,
    out: Vec<f64>,
    norm: f64,
}

impl AdaptedVec {
    fn forward(params: &AdapterParams, level: Level, x: &EmbeddingVector) -> Result<Self> {
        let u = params.level(level).affine(x.values());
        let norm = crate::embed::l2_norm(&u);
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Numerical(format!("degenerate {level} adapter output")));
        }
        Ok(Self {
            level,
            input: x.values().to_vec(),
            out: u.into_iter().map(|v| v / norm).collect(),
            norm,
        })
    }

    /// Accumulates dL/dA and dL/db given dL/dy.
    fn backward(&self, grad_out: &[f64], grads: &mut AdapterParams, frozen: &[Level]) {
        if frozen.contains(&self.level) {
            return;
        }
        let gu = project_out(&self.out, grad_out, self.norm);
        let d = gu.len();
        let g = grads.level_mut(self.level);
        for (i, gi) in gu.iter().enumerate() {
            if *gi == 0.0 {
                continue;
            }
            let row = &mut g.matrix[i * d..(i + 1) * d];
            row.iter_mut().zip(&self.input).for_each(|(a, x)| *a += gi * x);
            g.bias[i] += gi;
        }
    }
}

/// Jacobian-vector product of y = u/‖u‖: (g − y(y·g)) / ‖u‖.
fn project_out(y: &[f64], g: &[f64], norm: f64) -> Vec<f64> {
    let yg = dot(y, g);
    y.iter().zip(g).map(|(yi, gi)| (gi - yi * yg) / norm).collect()
}

/// Forward cache for one chunk representation.
enum ChunkForward {
    Single(AdaptedVec),
    Fused {
        parts: Vec<(f64, AdaptedVec)>,
        out: Vec<f64>,
        norm: f64,
    },
}

impl ChunkForward {
    fn new(params: &AdapterParams, repr: &ChunkRepr) -> Result<Self> {
        match repr {
            ChunkRepr::View(v) => Ok(Self::Single(AdaptedVec::forward(params, Level::View, v)?)),
            ChunkRepr::Components { chunk, context, metadata, weights } => {
                let c = AdaptedVec::forward(params, Level::Chunk, chunk)?;
                if context.is_none() && metadata.is_none() {
                    return Ok(Self::Single(c));
                }
                let mut parts = vec![(weights.0, c)];
                if let Some(x) = context {
                    parts.push((weights.1, AdaptedVec::forward(params, Level::Context, x)?));
                }
                if let Some(m) = metadata {
                    parts.push((weights.2, AdaptedVec::forward(params, Level::Metadata, m)?));
                }
                let dim = parts[0].1.out.len();
                let mut z = vec![0.0; dim];
                for (w, p) in &parts {
                    z.iter_mut().zip(&p.out).for_each(|(a, y)| *a += w * y);
                }
                let norm = crate::embed::l2_norm(&z);
                if !(norm > 0.0) || !norm.is_finite() {
                    return Err(Error::Numerical("fused chunk vector is zero".into()));
                }
                Ok(Self::Fused {
                    parts,
                    out: z.into_iter().map(|v| v / norm).collect(),
                    norm,
                })
            }
        }
    }

    fn out(&self) -> &[f64] {
        match self {
            Self::Single(a) => &a.out,
            Self::Fused { out, .. } => out,
        }
    }

    fn backward(&self, grad_out: &[f64], grads: &mut AdapterParams, frozen: &[Level]) {
        match self {
            Self::Single(a) => a.backward(grad_out, grads, frozen),
            Self::Fused { parts, out, norm } => {
                let gz = project_out(out, grad_out, *norm);
                for (w, p) in parts {
                    let gy: Vec<f64> = gz.iter().map(|g| w * g).collect();
                    p.backward(&gy, grads, frozen);
                }
            }
        }
    }
}

struct Forward {
    queries: Vec<AdaptedVec>,
    candidates: Vec<ChunkForward>,
    /// Cosine similarities, N × (N + K).
    cos: Vec<Vec<f64>>,
}

fn forward(batch: &Batch, params: &AdapterParams) -> Result<Forward> {
    batch.validate()?;
    let queries = batch
        .queries
        .iter()
        .map(|q| AdaptedVec::forward(params, Level::Query, q))
        .collect::<Result<Vec<_>>>()?;
    let candidates = batch
        .positives
        .iter()
        .chain(&batch.negatives)
        .map(|r| ChunkForward::new(params, r))
        .collect::<Result<Vec<_>>>()?;
    let cos = queries
        .iter()
        .map(|q| {
            let qn = crate::embed::l2_norm(&q.out);
            candidates
                .iter()
                .map(|c| dot(&q.out, c.out()) / (qn * crate::embed::l2_norm(c.out())))
                .collect()
        })
        .collect();
    Ok(Forward { queries, candidates, cos })
}

fn scaled(cos: &[Vec<f64>], temperature: f64) -> Vec<Vec<f64>> {
    cos.iter().map(|r| r.iter().map(|c| c / temperature).collect()).collect()
}

/// Loss of a batch of pre-adapter vectors under `params`.
pub fn batch_loss(batch: &Batch, params: &AdapterParams, temperature: f64) -> Result<f64> {
    let fwd = forward(batch, params)?;
    infonce_from_similarities(&scaled(&fwd.cos, temperature))
}

/// Loss and its exact gradient with respect to every adapter parameter.
/// Levels listed in `frozen` receive zero gradient.
pub fn grad_infonce(
    batch: &Batch,
    params: &AdapterParams,
    temperature: f64,
    frozen: &[Level],
) -> Result<(f64, AdapterParams)> {
    if !(temperature > 0.0) {
        return Err(Error::Param("temperature must be positive".into()));
    }
    let fwd = forward(batch, params)?;
    let sims = scaled(&fwd.cos, temperature);
    let loss = infonce_from_similarities(&sims)?;
    let n = sims.len();
    let dim = params.dim;

    // dL/ds_ij = (softmax_ij − δ_ij) / N
    let dsim: Vec<Vec<f64>> = sims
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let lse = log_sum_exp(row);
            row.iter()
                .enumerate()
                .map(|(j, s)| ((s - lse).exp() - if i == j { 1.0 } else { 0.0 }) / n as f64)
                .collect()
        })
        .collect();

    let mut gq = vec![vec![0.0; dim]; n];
    let mut gc = vec![vec![0.0; dim]; fwd.candidates.len()];
    for (i, q) in fwd.queries.iter().enumerate() {
        let qv = &q.out;
        let qn = crate::embed::l2_norm(qv);
        for (j, c) in fwd.candidates.iter().enumerate() {
            let g = dsim[i][j] / temperature;
            if g == 0.0 {
                continue;
            }
            let cv = c.out();
            let cn = crate::embed::l2_norm(cv);
            let cos = fwd.cos[i][j];
            // d cos / dq = c/(|q||c|) − cos·q/|q|², and symmetrically for c
            for k in 0..dim {
                gq[i][k] += g * (cv[k] / (qn * cn) - cos * qv[k] / (qn * qn));
                gc[j][k] += g * (qv[k] / (qn * cn) - cos * cv[k] / (cn * cn));
            }
        }
    }

    let mut grads = params.zeros_like();
    for (q, g) in fwd.queries.iter().zip(&gq) {
        q.backward(g, &mut grads, frozen);
    }
    for (c, g) in fwd.candidates.iter().zip(&gc) {
        c.backward(g, &mut grads, frozen);
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: AdapterParams,
    /// Batch loss at every step, measured before that step's update.
    pub losses: Vec<f64>,
}

/// Everything the trainer needs, embedded once with the frozen embedder.
pub struct TrainingData {
    pub pool: ChunkPool,
    pub examples: Vec<ResolvedExample>,
}

impl TrainingData {
    pub fn prepare(
        examples: &[TrainingExample],
        docs: &[ChunkedDocument],
        embedder: &dyn Embedder,
        view_cfg: &ViewConfig,
        chunking: &ChunkingConfig,
    ) -> Result<Self> {
        let views = build_corpus_views(docs, view_cfg, chunking, Execution::default_for_build())?;
        let reprs = encode_views(&views, embedder, view_cfg)?;
        let pool = ChunkPool::new(views.into_iter().map(|v| v.chunk_id).collect(), reprs)?;
        let queries: Vec<String> = examples.iter().map(|e| e.query.clone()).collect();
        let qvecs = embedder.embed(Level::Query, &queries)?;
        let examples = examples
            .iter()
            .zip(qvecs)
            .map(|(e, query)| {
                let positive = pool.position(&e.positive_chunk_id).ok_or_else(|| {
                    Error::Contract(format!("positive chunk `{}` is not in the corpus", e.positive_chunk_id))
                })?;
                Ok(ResolvedExample { query, positive })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { pool, examples })
    }
}

/// Plain SGD on the adapters, starting from identity.
pub fn train_on(data: &TrainingData, dim: usize, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut params = AdapterParams::with_temperature(dim, cfg.temperature);
    let frozen: &[Level] = if cfg.train_query_adapter { &[] } else { &[Level::Query] };
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = sample_batch(&data.examples, &data.pool, cfg, step as u64)?;
        let (loss, grads) = grad_infonce(&batch, &params, cfg.temperature, frozen).map_err(|e| match e {
            Error::Numerical(m) => Error::Numerical(format!("step {step}: {m}")),
            other => other,
        })?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss at step {step}")));
        }
        losses.push(loss);
        params
            .iter_params_mut()
            .zip(grads.iter_params())
            .for_each(|(p, g)| *p -= cfg.learning_rate * g);
    }
    Ok(TrainOutcome { params, losses })
}

pub fn train_adapter(
    examples: &[TrainingExample],
    docs: &[ChunkedDocument],
    embedder: &dyn Embedder,
    view_cfg: &ViewConfig,
    chunking: &ChunkingConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.steps == 0 {
        return Ok(TrainOutcome {
            params: AdapterParams::with_temperature(embedder.dimension(), cfg.temperature),
            losses: Vec::new(),
        });
    }
    let data = TrainingData::prepare(examples, docs, embedder, view_cfg, chunking)?;
    train_on(&data, embedder.dimension(), cfg)
}

pub fn parse_training_pairs(path: &Path) -> Result<Vec<TrainingExample>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    crate::io::parse_jsonl(&fs::read_to_string(path)?, &path.display().to_string())
}

/// Loss trace as `step,loss` CSV.
pub fn loss_csv(losses: &[f64]) -> String {
    let mut out = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        out.push_str(&format!("{i},{l}\n"));
    }
    out
}
