//! Fixtures and independent oracles shared by the integration suites.
#![allow(dead_code)]

use std::collections::BTreeMap;

use heterag::corpus::{Document, Section};
use heterag::embed::{AdapterParams, EmbeddingVector, Level};
use heterag::encoding::ChunkRepr;
use heterag::eval::{QaRecord, Qrels, Query};
use heterag::index::SearchResult;
use heterag::tuning::{batch_loss, Batch, TrainingExample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> EmbeddingVector {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-4 {
            return EmbeddingVector::normalized(v).unwrap();
        }
    }
}

/// Adapter parameters scattered around identity.
pub fn random_params(rng: &mut ChaCha8Rng, dim: usize, temperature: f64) -> AdapterParams {
    let mut p = AdapterParams::with_temperature(dim, temperature);
    for l in &mut p.levels {
        l.matrix.iter_mut().for_each(|a| *a += rng.random_range(-0.3..0.3));
        l.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.2..0.2));
    }
    p
}

fn random_repr(rng: &mut ChaCha8Rng, dim: usize, fused: bool) -> ChunkRepr {
    if !fused {
        return ChunkRepr::View(random_unit(rng, dim));
    }
    ChunkRepr::Components {
        chunk: random_unit(rng, dim),
        context: rng.random_bool(0.7).then(|| random_unit(rng, dim)),
        metadata: rng.random_bool(0.7).then(|| random_unit(rng, dim)),
        weights: (1.0, rng.random_range(0.1..1.0), rng.random_range(0.1..1.0)),
    }
}

/// Random pre-adapter batch; `fused` switches between text-fusion views
/// and embedding-fusion components.
pub fn random_batch(rng: &mut ChaCha8Rng, dim: usize, n: usize, k: usize, fused: bool) -> Batch {
    Batch {
        example_indices: (0..n).collect(),
        negative_indices: (0..k).collect(),
        queries: (0..n).map(|_| random_unit(rng, dim)).collect(),
        positives: (0..n).map(|_| random_repr(rng, dim, fused)).collect(),
        negatives: (0..k).map(|_| random_repr(rng, dim, fused)).collect(),
    }
}

/// Central finite differences of the batch loss over every adapter
/// parameter, in `AdapterParams::iter_params` order.
pub fn finite_difference_grad(batch: &Batch, params: &AdapterParams, temperature: f64, eps: f64) -> Vec<f64> {
    let n = params.iter_params().count();
    let mut out = Vec::with_capacity(n);
    let mut p = params.clone();
    for i in 0..n {
        let orig = *p.iter_params().nth(i).unwrap();
        *p.iter_params_mut().nth(i).unwrap() = orig + eps;
        let plus = batch_loss(batch, &p, temperature).unwrap();
        *p.iter_params_mut().nth(i).unwrap() = orig - eps;
        let minus = batch_loss(batch, &p, temperature).unwrap();
        *p.iter_params_mut().nth(i).unwrap() = orig;
        out.push((plus - minus) / (2.0 * eps));
    }
    out
}

/// Brute-force ranking: score every entry, full sort by (score desc,
/// chunk_id asc).
pub fn brute_force_search(entries: &[(String, String, Vec<f64>)], q: &[f64], k: usize) -> Vec<SearchResult> {
    let qn = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut all: Vec<SearchResult> = entries
        .iter()
        .map(|(c, d, v)| {
            let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            SearchResult {
                chunk_id: c.clone(),
                doc_id: d.clone(),
                score: if vn == 0.0 { 0.0 } else { dot / (qn * vn) },
            }
        })
        .collect();
    all.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap().then_with(|| a.chunk_id.cmp(&b.chunk_id)));
    all.truncate(k);
    all
}

/// nDCG by explicit enumeration: the ideal DCG is the maximum over every
/// permutation of the judged documents.
pub fn brute_force_ndcg(ranked: &[String], grades: &BTreeMap<String, u32>, k: usize) -> f64 {
    fn dcg(gs: &[u32], k: usize) -> f64 {
        gs.iter()
            .take(k)
            .enumerate()
            .map(|(i, &g)| f64::from(g) / ((i + 2) as f64).log2())
            .sum()
    }
    fn best(rest: &mut Vec<u32>, prefix: &mut Vec<u32>, k: usize) -> f64 {
        if rest.is_empty() || prefix.len() == k {
            return dcg(prefix, k);
        }
        let mut m = 0.0f64;
        for i in 0..rest.len() {
            let g = rest.remove(i);
            prefix.push(g);
            m = m.max(best(rest, prefix, k));
            prefix.pop();
            rest.insert(i, g);
        }
        m
    }
    let got: Vec<u32> = ranked.iter().map(|d| grades.get(d).copied().unwrap_or(0)).collect();
    let mut judged: Vec<u32> = grades.values().copied().collect();
    let ideal = best(&mut judged, &mut Vec::new(), k);
    if ideal == 0.0 {
        0.0
    } else {
        dcg(&got, k) / ideal
    }
}

const WORDS: &[&str] = &[
    "river", "stone", "cloud", "paper", "signal", "garden", "engine", "window", "copper", "forest",
    "market", "letter", "bridge", "winter", "candle", "mirror", "silver", "planet", "harbor", "meadow",
    "valley", "rocket", "pencil", "orange", "castle", "island", "jacket", "ladder", "magnet", "needle",
];

fn filler(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

/// Generic multi-section corpus with queries and qrels drawn from it.
pub fn generic_corpus(n_docs: usize, seed: u64) -> (Vec<Document>, Vec<Query>, Qrels) {
    let mut rng = rng(seed);
    let mut docs = Vec::new();
    let mut queries = Vec::new();
    let mut qrels = Qrels::default();
    for d in 0..n_docs {
        let mut doc = Document::flat(format!("doc{d:03}"), format!("report {d} on {}", filler(&mut rng, 2)), "");
        doc.keywords = vec![WORDS[d % WORDS.len()].to_string()];
        doc.abstract_text = Some(filler(&mut rng, 12));
        doc.sections = (0..3)
            .map(|s| Section {
                path: vec![format!("part {s}"), filler(&mut rng, 1)],
                text: format!("{} tag{d}x{s} {}", filler(&mut rng, 40), filler(&mut rng, 60)),
            })
            .collect();
        if d % 2 == 0 {
            let qid = format!("q{d:03}");
            queries.push(Query { query_id: qid.clone(), text: format!("tag{d}x1 {}", filler(&mut rng, 3)) });
            qrels.insert(&qid, &doc.doc_id, 1 + (d % 2) as u32);
            qrels.insert(&qid, &format!("doc{:03}", (d + 1) % n_docs), 1);
        }
        docs.push(doc);
    }
    (docs, queries, qrels)
}

/// Thirty documents whose titles and section headings carry unique probe
/// words that never occur in any body text. Each query is made of probe
/// words only.
pub fn metadata_probe_corpus() -> (Vec<Document>, Vec<Query>, Qrels) {
    let mut rng = rng(30);
    let mut docs = Vec::new();
    let mut queries = Vec::new();
    let mut qrels = Qrels::default();
    for d in 0..30 {
        let title_word = format!("zeta{d}title");
        let section_word = format!("omega{d}heading");
        let mut doc = Document::flat(format!("p{d:02}"), format!("{title_word} study"), "");
        doc.sections = vec![
            Section { path: vec![section_word.clone()], text: filler(&mut rng, 50) },
            Section { path: vec!["appendix".into()], text: filler(&mut rng, 30) },
        ];
        let qid = format!("mq{d:02}");
        queries.push(Query { query_id: qid.clone(), text: format!("{title_word} {section_word}") });
        qrels.insert(&qid, &doc.doc_id, 1);
        docs.push(doc);
    }
    (docs, queries, qrels)
}

/// Chunks made of a shared boilerplate block plus a few tokens unique to
/// the chunk; each query is exactly its positive chunk's text. At identity
/// the shared block makes all candidates look alike; an adapter that
/// suppresses it separates them.
pub fn separable_training_corpus() -> (Vec<Document>, Vec<TrainingExample>) {
    let boiler = "shared preamble words appear in every single passage of this synthetic training collection";
    let mut docs = Vec::new();
    let mut examples = Vec::new();
    for d in 0..48 {
        let text = format!("{boiler} uniq{d}a uniq{d}b");
        let doc = Document::flat(format!("s{d:02}"), "", text.clone());
        examples.push(TrainingExample {
            query: heterag::corpus::detokenize(&heterag::corpus::tokenize(&text)),
            positive_chunk_id: format!("s{d:02}#0"),
        });
        docs.push(doc);
    }
    (docs, examples)
}

/// QA records whose golden answer is the text of a known chunk.
pub fn qa_records(n: usize) -> Vec<QaRecord> {
    (0..n)
        .map(|i| QaRecord {
            query_id: format!("qa{i:02}"),
            question: format!("what is tag{}x1", 2 * i),
            golden_answers: vec![format!("answer {i}")],
        })
        .collect()
}

pub fn level_names() -> Vec<&'static str> {
    Level::ALL.iter().map(|l| l.as_str()).collect()
}

/// Writes a complete small experiment (corpus, queries, qrels, QA set,
/// training pairs and `run.toml`) into `dir` and returns the config path.
pub fn write_pipeline_fixture(dir: &std::path::Path, extra_toml: &str) -> std::path::PathBuf {
    use heterag::io::to_jsonl;
    let (docs, queries, qrels) = generic_corpus(12, 7);
    std::fs::write(dir.join("corpus.jsonl"), heterag::corpus::write_corpus_string(&docs).unwrap()).unwrap();
    std::fs::write(dir.join("queries.jsonl"), to_jsonl(&queries).unwrap()).unwrap();
    let mut tsv = String::from("query-id\tcorpus-id\tscore\n");
    for (q, row) in &qrels.0 {
        for (d, g) in row {
            tsv.push_str(&format!("{q}\t{d}\t{g}\n"));
        }
    }
    std::fs::write(dir.join("qrels.tsv"), tsv).unwrap();
    std::fs::write(dir.join("qa.jsonl"), to_jsonl(&qa_records(5)).unwrap()).unwrap();
    let pairs: Vec<TrainingExample> = queries
        .iter()
        .map(|q| TrainingExample {
            query: q.text.clone(),
            positive_chunk_id: format!("doc{}#0", &q.query_id[1..]),
        })
        .collect();
    std::fs::write(dir.join("train.jsonl"), to_jsonl(&pairs).unwrap()).unwrap();
    let toml = format!(
        "seed = 0\n{extra_toml}\n[chunking]\nchunk_size = 32\n[embedder]\ndimension = 64\n\
         [train]\nsteps = 20\nbatch_size = 4\nrandom_negatives = 4\n[eval]\nchunk_sizes = [16, 32]\nqa_top_ks = [1, 3]\n"
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, toml).unwrap();
    path
}
