//! Ranking and QA metrics, and the experiment sweeps that produce
//! retrieval and QA report tables.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{chunk_corpus, ChunkingConfig, Document};
use crate::embed::{AdapterParams, Embedder};
use crate::encoding::{encode_queries, encode_views};
use crate::error::{Error, Result};
use crate::index::{dedup_by_document, VectorIndex};
use crate::par::{self, Execution};
use crate::rag::Pipeline;
use crate::views::{build_corpus_views, Method, ViewConfig};

/// Graded relevance judgments: query_id → doc_id → grade.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Qrels(pub BTreeMap<String, BTreeMap<String, u32>>);

impl Qrels {
    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) {
        self.0.entry(query_id.to_string()).or_default().insert(doc_id.to_string(), grade);
    }

    pub fn row(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.0.get(query_id)
    }

    /// `query_id<TAB>doc_id<TAB>grade` lines. A first line whose grade is
    /// not an integer is taken as a header and skipped.
    pub fn parse_tsv(input: &str, source: &str) -> Result<Self> {
        let mut q = Qrels::default();
        for (i, line) in input.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: source.to_string(),
                line: i + 1,
                message,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(err(format!("expected 3 tab-separated fields, found {}", fields.len())));
            }
            let grade = match fields[2].trim().parse::<u32>() {
                Ok(g) => g,
                Err(_) if i == 0 => continue,
                Err(e) => return Err(err(format!("bad grade `{}`: {e}", fields[2]))),
            };
            q.insert(fields[0].trim(), fields[1].trim(), grade);
        }
        Ok(q)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::parse_tsv(&fs::read_to_string(path)?, &path.display().to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaRecord {
    pub query_id: String,
    pub question: String,
    pub golden_answers: Vec<String>,
}

/// nDCG@k with linear gain and 1/log2(rank+1) discount. The ideal ordering
/// ranks every judged document by grade. Returns 0 when nothing is relevant.
pub fn ndcg_at_k(ranked_doc_ids: &[String], grades: &BTreeMap<String, u32>, k: usize) -> f64 {
    let discount = |rank0: usize| 1.0 / ((rank0 + 2) as f64).log2();
    let dcg: f64 = ranked_doc_ids
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, d)| f64::from(grades.get(d).copied().unwrap_or(0)) * discount(i))
        .sum();
    let mut ideal: Vec<u32> = grades.values().copied().filter(|&g| g > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal.iter().take(k).enumerate().map(|(i, &g)| f64::from(g) * discount(i)).sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Lowercase, strip punctuation, drop the articles a/an/the, collapse
/// whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lowered = s.to_lowercase();
    let no_punct: String = lowered
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn exact_match(prediction: &str, golds: &[String]) -> u8 {
    let p = normalize_answer(prediction);
    u8::from(golds.iter().any(|g| normalize_answer(g) == p))
}

fn f1_single(prediction: &str, gold: &str) -> f64 {
    let p = normalize_answer(prediction);
    let g = normalize_answer(gold);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    if pt.is_empty() && gt.is_empty() {
        return 1.0;
    }
    let mut counts: HashMap<&str, i64> = HashMap::new();
    for t in &gt {
        *counts.entry(t).or_default() += 1;
    }
    let mut shared = 0usize;
    for t in &pt {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                shared += 1;
            }
        }
    }
    if shared == 0 {
        return 0.0;
    }
    let precision = shared as f64 / pt.len() as f64;
    let recall = shared as f64 / gt.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Token-level F1 against the best-matching gold answer.
pub fn token_f1(prediction: &str, golds: &[String]) -> f64 {
    golds.iter().map(|g| f1_single(prediction, g)).fold(0.0, f64::max)
}

/// 1 if some normalized gold answer occurs in the normalized prediction.
pub fn answer_recall(prediction: &str, golds: &[String]) -> u8 {
    let p = normalize_answer(prediction);
    u8::from(golds.iter().any(|g| {
        let g = normalize_answer(g);
        if g.is_empty() {
            p.is_empty()
        } else {
            p.contains(&g)
        }
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRow {
    pub embedder: String,
    pub chunk_size: usize,
    pub method: Method,
    /// `ndcg@k` → mean over evaluated queries.
    pub metrics: BTreeMap<String, f64>,
    pub queries_evaluated: usize,
    /// Queries without any qrels entry.
    pub queries_skipped: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub rows: Vec<RetrievalRow>,
}

impl RetrievalReport {
    pub fn cell(&self, chunk_size: usize, method: Method) -> Option<&RetrievalRow> {
        self.rows.iter().find(|r| r.chunk_size == chunk_size && r.method == method)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn to_table(&self) -> String {
        let metric_names: Vec<String> = self
            .rows
            .first()
            .map(|r| r.metrics.keys().cloned().collect())
            .unwrap_or_default();
        let mut header = vec!["embedder".to_string(), "chunk_size".into(), "method".into()];
        header.extend(metric_names.iter().cloned());
        header.push("queries".into());
        let body = self
            .rows
            .iter()
            .map(|r| {
                let mut cells = vec![r.embedder.clone(), r.chunk_size.to_string(), r.method.to_string()];
                cells.extend(metric_names.iter().map(|m| format!("{:.4}", r.metrics.get(m).copied().unwrap_or(0.0))));
                cells.push(r.queries_evaluated.to_string());
                cells
            })
            .collect::<Vec<_>>();
        aligned_table(&header, &body)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaRow {
    pub llm: String,
    pub dataset: String,
    pub method: Method,
    pub top_k: usize,
    pub em: f64,
    pub f1: f64,
    pub recall: f64,
    pub evaluated: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QaReport {
    pub rows: Vec<QaRow>,
}

impl QaReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn to_table(&self) -> String {
        let header: Vec<String> = ["llm", "dataset", "method", "top_k", "EM", "F1", "Recall", "n", "failed"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let body = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.llm.clone(),
                    r.dataset.clone(),
                    r.method.to_string(),
                    r.top_k.to_string(),
                    format!("{:.4}", r.em),
                    format!("{:.4}", r.f1),
                    format!("{:.4}", r.recall),
                    r.evaluated.to_string(),
                    r.failures.to_string(),
                ]
            })
            .collect::<Vec<_>>();
        aligned_table(&header, &body)
    }
}

fn aligned_table(header: &[String], body: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[String]| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(&mut out, header);
    line(&mut out, &widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>());
    for row in body {
        line(&mut out, row);
    }
    out
}

/// One retrieval sweep: every chunk size × every method.
#[derive(Debug, Clone)]
pub struct RetrievalGrid {
    pub chunk_sizes: Vec<usize>,
    pub methods: Vec<Method>,
    pub neighbor_radius: usize,
    /// View configuration used for the `heterag` method.
    pub view: ViewConfig,
    pub ndcg_ks: Vec<usize>,
}

impl Default for RetrievalGrid {
    fn default() -> Self {
        Self {
            chunk_sizes: vec![16, 32, 64, 128],
            methods: vec![Method::Naive, Method::HeteRag],
            neighbor_radius: 1,
            view: ViewConfig::default(),
            ndcg_ks: vec![1, 10],
        }
    }
}

/// Document ranking for one query: chunk hits mapped to their documents,
/// keeping each document's best rank, at least `depth` documents deep when
/// the index has that many.
pub fn rank_documents(index: &VectorIndex, q: &crate::embed::EmbeddingVector, depth: usize, exec: Execution) -> Result<Vec<String>> {
    let mut k = (depth * 4).max(1);
    loop {
        let hits = index.search_topk_with(q, k.min(index.len().max(1)), exec)?;
        let docs = dedup_by_document(&hits);
        if docs.len() >= depth || k >= index.len() {
            return Ok(docs.into_iter().map(|r| r.doc_id).collect());
        }
        k *= 2;
    }
}

/// Mean nDCG per chunk size and method. `adapter`, when given, is applied
/// to queries and views of the `heterag` rows only.
pub fn run_retrieval_eval(
    docs: &[Document],
    queries: &[Query],
    qrels: &Qrels,
    grid: &RetrievalGrid,
    embedder: &dyn Embedder,
    embedder_label: &str,
    adapter: Option<&AdapterParams>,
    exec: Execution,
) -> Result<RetrievalReport> {
    if grid.ndcg_ks.iter().any(|&k| k == 0) {
        return Err(Error::Param("nDCG cutoffs must be at least 1".into()));
    }
    let mut sorted: Vec<&Query> = queries.iter().collect();
    sorted.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    let (judged, skipped): (Vec<&Query>, Vec<&Query>) = sorted.into_iter().partition(|q| qrels.row(&q.query_id).is_some());
    if !skipped.is_empty() {
        log::warn!("{} queries have no relevance judgments and are skipped", skipped.len());
    }
    let depth = grid.ndcg_ks.iter().copied().max().unwrap_or(10);
    let texts: Vec<String> = judged.iter().map(|q| q.text.clone()).collect();

    let mut rows = Vec::new();
    for &chunk_size in &grid.chunk_sizes {
        let chunking = ChunkingConfig {
            chunk_size,
            neighbor_radius: grid.neighbor_radius,
        };
        chunking.validate()?;
        let chunked = chunk_corpus(docs, &chunking);
        for &method in &grid.methods {
            let view_cfg = grid.view.for_method(method);
            let params = adapter.filter(|_| method == Method::HeteRag);
            let views = build_corpus_views(&chunked, &view_cfg, &chunking, exec)?;
            let reprs = encode_views(&views, embedder, &view_cfg)?;
            let vectors = par::try_map(exec, &reprs, |r| r.finalize(params))?;
            let ids: Vec<(String, String)> = views.iter().map(|v| (v.chunk_id.clone(), v.doc_id.clone())).collect();
            let index = VectorIndex::build(embedder.dimension(), &ids, &vectors)?;
            let qvecs = encode_queries(&texts, embedder, params)?;

            let per_query: Vec<Vec<f64>> = par::try_map(exec, &(0..judged.len()).collect::<Vec<_>>(), |&i| {
                let ranking = rank_documents(&index, &qvecs[i], depth, Execution::Sequential)?;
                let grades = qrels.row(&judged[i].query_id).expect("judged");
                Ok::<_, Error>(grid.ndcg_ks.iter().map(|&k| ndcg_at_k(&ranking, grades, k)).collect())
            })?;

            let mut metrics = BTreeMap::new();
            for (m, &k) in grid.ndcg_ks.iter().enumerate() {
                let sum: f64 = per_query.iter().map(|v| v[m]).sum();
                let mean = if per_query.is_empty() { 0.0 } else { sum / per_query.len() as f64 };
                metrics.insert(format!("ndcg@{k}"), mean);
            }
            rows.push(RetrievalRow {
                embedder: embedder_label.to_string(),
                chunk_size,
                method,
                metrics,
                queries_evaluated: judged.len(),
                queries_skipped: skipped.len(),
            });
        }
    }
    Ok(RetrievalReport { rows })
}

/// Runs the pipeline on every record for every `k` and averages EM, F1 and
/// answer recall over the records that generated successfully.
pub fn run_qa_eval(
    records: &[QaRecord],
    pipeline: &Pipeline,
    dataset: &str,
    method: Method,
    top_ks: &[usize],
) -> Result<QaReport> {
    let mut sorted: Vec<&QaRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    if let Some(r) = sorted.iter().find(|r| r.golden_answers.is_empty()) {
        return Err(Error::Contract(format!("record `{}` has no golden answers", r.query_id)));
    }
    let mut rows = Vec::new();
    for &k in top_ks {
        let (mut em, mut f1, mut recall) = (0.0, 0.0, 0.0);
        let (mut ok, mut failures) = (0usize, 0usize);
        for r in &sorted {
            match pipeline.run_with_k(&r.question, k) {
                Ok(ans) => {
                    ok += 1;
                    em += f64::from(exact_match(&ans.text, &r.golden_answers));
                    f1 += token_f1(&ans.text, &r.golden_answers);
                    recall += f64::from(answer_recall(&ans.text, &r.golden_answers));
                }
                Err(e) => {
                    log::warn!("generation failed for `{}`: {e}", r.query_id);
                    failures += 1;
                }
            }
        }
        let mean = |s: f64| if ok == 0 { 0.0 } else { s / ok as f64 };
        rows.push(QaRow {
            llm: pipeline.generator.label(),
            dataset: dataset.to_string(),
            method,
            top_k: k,
            em: mean(em),
            f1: mean(f1),
            recall: mean(recall),
            evaluated: ok,
            failures,
        });
    }
    Ok(QaReport { rows })
}
