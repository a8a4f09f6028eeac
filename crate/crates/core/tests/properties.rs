mod common;

use heterag::corpus::{chunk_corpus, tokenize, ChunkingConfig, Document, Section};
use heterag::embed::{fuse_embeddings, AdapterParams, EmbeddingVector, HashEmbedder};
use heterag::encoding::encode_views;
use heterag::eval::ndcg_at_k;
use heterag::index::VectorIndex;
use heterag::par::Execution;
use heterag::tuning::{grad_infonce, train_adapter, TrainConfig};
use heterag::views::{build_corpus_views, FusionMode, ViewConfig};
use proptest::prelude::*;

fn words() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!["a", "bb", "c,", "dd.", "e-f", "g"]), 0..40)
        .prop_map(|w| w.join(" "))
}

fn document(id: usize) -> impl Strategy<Value = Document> {
    (words(), words(), prop::collection::vec((words(), words()), 1..4)).prop_map(move |(title, abs, secs)| {
        let mut d = Document::flat(format!("d{id}"), title, "");
        d.abstract_text = Some(abs);
        d.keywords = vec!["kw".into(), "other kw".into()];
        d.extra_meta.insert("venue".into(), "somewhere".into());
        d.sections = secs
            .into_iter()
            .map(|(head, text)| Section { path: vec![head], text })
            .collect();
        d
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn search_matches_brute_force(
        raw in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 6), 1..60),
        q in prop::collection::vec(-1.0f64..1.0, 6),
        k in 1usize..70,
    ) {
        prop_assume!(q.iter().any(|x| x.abs() > 1e-3));
        let ids: Vec<(String, String)> = (0..raw.len()).map(|i| (format!("c{:02}", (i * 7) % 61), format!("d{}", i % 5))).collect();
        let vecs: Vec<EmbeddingVector> = raw.iter().cloned().map(EmbeddingVector::from_raw).collect();
        let index = VectorIndex::build(6, &ids, &vecs).unwrap();
        let stored: Vec<(String, String, Vec<f64>)> = ids
            .iter()
            .zip(&raw)
            .map(|((c, d), v)| (c.clone(), d.clone(), v.iter().map(|&x| f64::from(x as f32)).collect()))
            .collect();
        let qv = EmbeddingVector::from_raw(q.clone());
        let want = common::brute_force_search(&stored, &q, k);
        prop_assert_eq!(index.search_topk_with(&qv, k, Execution::Sequential).unwrap(), want.clone());
        prop_assert_eq!(index.search_topk_with(&qv, k, Execution::Parallel).unwrap(), want);
    }

    #[test]
    fn ndcg_matches_enumeration(grades in prop::collection::vec(0u32..3, 1..7), perm_seed in any::<u64>(), k in 1usize..8) {
        use rand::seq::SliceRandom;
        let judged: std::collections::BTreeMap<String, u32> =
            grades.iter().enumerate().map(|(i, &g)| (format!("d{i}"), g)).collect();
        let mut ranking: Vec<String> = judged.keys().cloned().chain(["x".to_string()]).collect();
        ranking.shuffle(&mut common::rng(perm_seed));
        let got = ndcg_at_k(&ranking, &judged, k);
        prop_assert!((got - common::brute_force_ndcg(&ranking, &judged, k)).abs() < 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&got));
    }

    #[test]
    fn rendered_views_fit_the_budget(doc in document(0), budget in 1usize..80, size in 1usize..12) {
        let chunking = ChunkingConfig::new(size).unwrap();
        let cfg = ViewConfig { token_budget: budget.max(size), doc_lead_tokens: 10, section_lead_tokens: 5, ..ViewConfig::default() };
        let chunked = chunk_corpus(&[doc], &chunking);
        for v in build_corpus_views(&chunked, &cfg, &chunking, Execution::Sequential).unwrap() {
            let rendered = v.render();
            prop_assert!(tokenize(&rendered).len() <= cfg.token_budget, "{} > {}", tokenize(&rendered).len(), cfg.token_budget);
            prop_assert!(rendered.ends_with(&v.chunk_text), "chunk text lost: {rendered}");
        }
    }

    #[test]
    fn ablated_embedding_fusion_is_bare_chunk(doc in document(1), size in 1usize..12) {
        let chunking = ChunkingConfig::new(size).unwrap();
        let embedder = HashEmbedder::new(32).unwrap();
        let chunked = chunk_corpus(&[doc], &chunking);
        let naive = ViewConfig::naive();
        let ablated = ViewConfig { use_context: false, use_metadata: false, fusion_mode: FusionMode::Embedding, ..ViewConfig::default() };
        let embed = |cfg: &ViewConfig| -> Vec<EmbeddingVector> {
            let views = build_corpus_views(&chunked, cfg, &chunking, Execution::Sequential).unwrap();
            encode_views(&views, &embedder, cfg).unwrap().iter().map(|r| r.finalize(None).unwrap()).collect()
        };
        let (a, b) = (embed(&naive), embed(&ablated));
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(x.values().iter().zip(y.values()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn fused_embeddings_are_unit_norm(seed in any::<u64>(), wc in 0.1f64..2.0, wm in 0.1f64..2.0) {
        let mut r = common::rng(seed);
        let c = common::random_unit(&mut r, 12);
        let x = common::random_unit(&mut r, 12);
        let m = common::random_unit(&mut r, 12);
        let f = fuse_embeddings((1.0, wc, wm), &c, Some(&x), Some(&m)).unwrap();
        prop_assert!((f.norm() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn halving_temperature_matches_finite_differences() {
    let mut r = common::rng(21);
    for case in 0..20 {
        let batch = common::random_batch(&mut r, 6, 3, 2, case % 2 == 0);
        let params = common::random_params(&mut r, 6, 0.4);
        for tau in [0.4, 0.2] {
            let (_, g) = grad_infonce(&batch, &params, tau, &[]).unwrap();
            let fd = common::finite_difference_grad(&batch, &params, tau, 1e-5);
            for (a, n) in g.iter_params().zip(&fd) {
                let scale = a.abs().max(n.abs()).max(1e-6);
                assert!((a - n).abs() / scale < 1e-4, "case {case} tau {tau}: {a} vs {n}");
            }
        }
    }
}

#[test]
fn training_descends_and_repeats_exactly() {
    let (docs, examples) = common::separable_training_corpus();
    let chunking = ChunkingConfig::new(64).unwrap();
    let chunked = chunk_corpus(&docs, &chunking);
    let embedder = HashEmbedder::new(64).unwrap();
    let cfg = TrainConfig { steps: 60, seed: 3, ..TrainConfig::default() };
    let run = || train_adapter(&examples, &chunked, &embedder, &ViewConfig::naive(), &chunking, &cfg).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.losses, b.losses);
    assert_eq!(a.params, b.params);
    let head: f64 = a.losses[..10].iter().sum();
    let tail: f64 = a.losses[50..].iter().sum();
    assert!(tail < head, "loss did not fall: {head} -> {tail}");
    assert_ne!(a.params, AdapterParams::identity(64));
}

#[test]
fn zero_steps_returns_identity() {
    let (docs, examples) = common::separable_training_corpus();
    let chunking = ChunkingConfig::new(64).unwrap();
    let chunked = chunk_corpus(&docs, &chunking);
    let embedder = HashEmbedder::new(16).unwrap();
    let cfg = TrainConfig { steps: 0, ..TrainConfig::default() };
    let out = train_adapter(&examples, &chunked, &embedder, &ViewConfig::naive(), &chunking, &cfg).unwrap();
    assert!(out.losses.is_empty());
    assert_eq!(out.params.levels, AdapterParams::identity(16).levels);
}
