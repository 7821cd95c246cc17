use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::catalog::{AttributeSpec, Dtype, LeadSentenceSummarizer};
use crate::extract::tokenizer::ApproxTokenizer;

const D: usize = 16;

/// Unit vector at Euclidean distance `d` from `e0`, rotated towards `e_axis`.
fn at_distance(d: f64, axis: usize) -> Vec<f32> {
    let c = 1.0 - d * d / 2.0;
    let s = (1.0 - c * c).max(0.0).sqrt();
    let mut v = vec![0f32; D];
    v[0] = c as f32;
    v[axis] = s as f32;
    v
}

fn e0() -> Vec<f32> {
    at_distance(0.0, 1)
}

fn segment(doc: &str, i: usize, v: Vec<f32>, tokens: usize) -> Segment {
    Segment {
        seg_id: format!("{doc}#{i}"),
        doc_id: doc.into(),
        span: (i * 10, i * 10 + 10),
        text: "x".repeat(10),
        token_count: tokens,
        embedding: v,
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    embed::normalize(v)
}

fn small_corpus() -> Corpus {
    Corpus::from_records(
        [
            ("a", "Alpha beta gamma. Alpha beta delta.\n\nOther words entirely here."),
            ("b", "Violin cello oboe. Violin cello harp. Trumpet drum."),
            ("c", "One lonely sentence"),
        ]
        .map(|(i, t)| (i.to_string(), t.to_string())),
        &ApproxTokenizer,
        &LeadSentenceSummarizer::default(),
    )
    .unwrap()
}

#[test]
fn planted_document_retrieval() {
    let mut idx = VectorIndex::new(Level::Document, D, "t");
    for i in 0..10 {
        idx.insert(&format!("rel{i}"), at_distance(0.3, 1 + i % 5)).unwrap();
        idx.insert(&format!("irr{i}"), at_distance(0.9, 6 + i % 5)).unwrap();
    }
    let got = retrieve_documents(&idx, &e0(), 0.4);
    let want: Vec<String> = (0..10).map(|i| format!("rel{i}")).collect();
    assert_eq!(got, want);
    assert!(retrieve_documents(&idx, &e0(), 0.0).is_empty());
    assert_eq!(retrieve_documents(&idx, &e0(), 2.0 + 1e-9).len(), 20);
}

#[test]
fn tau_calibration() {
    let tau = tau_from_distances(&[0.21, 0.35, 0.30]).unwrap();
    assert!((tau - 0.45).abs() < 1e-12);
    assert_eq!(tau_from_distances(&[0.0]).unwrap(), 0.1);
    assert!(matches!(tau_from_distances(&[]), Err(IndexError::CalibrationFailed(_))));

    let mut idx = VectorIndex::new(Level::Document, D, "t");
    idx.insert("m", at_distance(0.35, 1)).unwrap();
    idx.insert("n", at_distance(1.1, 2)).unwrap();
    let outcomes = vec![("m".to_string(), true), ("n".to_string(), false)];
    let tau = calibrate_tau(&idx, &e0(), &outcomes).unwrap();
    assert!((tau - (distance(&at_distance(0.35, 1), &e0()) + 0.1)).abs() < 1e-12);
    let none = vec![("n".to_string(), false)];
    assert!(calibrate_tau(&idx, &e0(), &none).is_err());
}

#[test]
fn gamma_calibration() {
    // Planar points with pairwise distances 0.2, 0.5 and 0.4.
    let y = (0.25f64 - 0.325 * 0.325).sqrt();
    let embs = vec![vec![0.0f32, 0.0], vec![0.2, 0.0], vec![0.325, y as f32]];
    assert!((distance(&embs[0], &embs[2]) - 0.5).abs() < 1e-6);
    assert!((distance(&embs[1], &embs[2]) - 0.4).abs() < 1e-6);
    let g = calibrate_gamma(&embs, DEFAULT_GAMMA);
    assert!(!g.fallback);
    assert!((g.gamma - 0.6).abs() < 1e-6);

    let same = vec![e0(), e0()];
    let dup = calibrate_gamma(&same, DEFAULT_GAMMA);
    assert!(dup.fallback);
    assert_eq!(dup.gamma, DEFAULT_GAMMA);
    let single = calibrate_gamma(&[e0()], DEFAULT_GAMMA);
    assert!(single.fallback);
    assert_eq!(single.gamma, DEFAULT_GAMMA);
}

#[test]
fn kmeans_singleton_and_groups() {
    let v = at_distance(0.5, 3);
    assert_eq!(kmeans(std::slice::from_ref(&v), 3, 7), vec![v.clone()]);

    let groups = [(1, 2), (3, 4), (5, 6)];
    let mut pts = Vec::new();
    for &(a, b) in &groups {
        let mut x = vec![0f32; D];
        x[a] = 1.0;
        let mut y = vec![0f32; D];
        y[a] = 0.9;
        y[b] = (1.0f32 - 0.81).sqrt();
        pts.push(x);
        pts.push(y);
    }
    let centers = kmeans(&pts, 3, 11);
    assert_eq!(centers.len(), 3);
    for g in 0..3 {
        let mean: Vec<f32> = (0..D).map(|i| (pts[2 * g][i] + pts[2 * g + 1][i]) / 2.0).collect();
        let mean = embed::normalize(mean);
        assert!(
            centers.iter().any(|c| distance(c, &mean) < 1e-6),
            "no center near group {g}"
        );
    }
}

#[test]
fn evidence_paths() {
    let emb = HashedEmbedder::default();
    let prov = vec![at_distance(0.0, 1)];
    let ev = collect_evidence("T.a", &prov, 3, 1, &emb, || unreachable!()).unwrap();
    assert_eq!(ev.centers.len(), 1);
    assert_eq!(ev.source, EvidenceSource::Sampled);

    let ev = collect_evidence("T.a", &[], 3, 1, &emb, || {
        Ok((0..20).map(|i| format!("example passage number {i} about stuff")).collect())
    })
    .unwrap();
    assert_eq!(ev.source, EvidenceSource::Synthesized);
    assert_eq!(ev.centers.len(), 3);

    let err = collect_evidence("T.a", &[], 3, 1, &emb, || Err("down".into()));
    assert!(matches!(err, Err(IndexError::EvidenceUnavailable(_))));
}

fn planted_segments() -> TwoLevelIndex {
    let mut docs = VectorIndex::new(Level::Document, D, "t");
    docs.insert("d", e0()).unwrap();
    let segs: Vec<Segment> = (0..8)
        .map(|i| {
            let relevant = i == 2 || i == 5;
            let v = if relevant {
                at_distance(0.2, 1 + i)
            } else {
                at_distance(0.8, 1 + i)
            };
            segment("d", i, v, 10 + i)
        })
        .collect();
    TwoLevelIndex::from_parts(docs, vec![segs]).unwrap()
}

#[test]
fn planted_segment_retrieval() {
    let idx = planted_segments();
    let ev = EvidenceSet {
        attribute: "T.a".into(),
        centers: vec![e0()],
        source: EvidenceSource::Sampled,
    };
    let sel = retrieve_segments(&idx, "d", &ev, 0.5);
    assert_eq!(sel.seg_ids(), vec!["d#2", "d#5"]);
    assert_eq!(sel.tokens, 12 + 15);
    assert!(retrieve_segments(&idx, "missing", &ev, 0.5).segments.is_empty());
}

#[test]
fn segment_self_match_and_dedup() {
    let idx = planted_segments();
    let target = idx.segments_of("d")[3].embedding.clone();
    let ev = EvidenceSet {
        attribute: "T.a".into(),
        centers: vec![target.clone(), target],
        source: EvidenceSource::Sampled,
    };
    let sel = retrieve_segments(&idx, "d", &ev, 0.1);
    assert_eq!(sel.seg_ids(), vec!["d#3"]);
}

#[test]
fn query_embedding_is_normalized_mean() {
    let emb = HashedEmbedder::default();
    let age = AttributeSpec::new("Players", "age", Dtype::Number, "age of the player in years");
    let stars = AttributeSpec::new("Players", "all_stars", Dtype::Number, "number of all-star selections");
    let single = query_embedding(std::slice::from_ref(&age), &emb).unwrap();
    assert_eq!(single, emb.embed(&age.embedding_text()).unwrap());
    let twice = query_embedding(&[age.clone(), age.clone()], &emb).unwrap();
    assert!(distance(&single, &twice) < 1e-6);

    let both = query_embedding(&[age.clone(), stars.clone()], &emb).unwrap();
    let v1 = emb.embed(&age.embedding_text()).unwrap();
    let v2 = emb.embed(&stars.embedding_text()).unwrap();
    let mean: Vec<f64> = v1.iter().zip(&v2).map(|(&a, &b)| (a as f64 + b as f64) / 2.0).collect();
    let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
    for (i, m) in mean.iter().enumerate() {
        assert!((both[i] as f64 - m / norm).abs() < 1e-6);
    }
}

#[test]
fn build_sizes_and_self_match() {
    let corpus = small_corpus();
    let idx = build_indexes(&corpus, &HashedEmbedder::default(), &ApproxTokenizer, 0.75).unwrap();
    assert_eq!(idx.documents.len(), 3);
    let n_segs: usize = corpus.docs().iter().map(|d| idx.segments_of(&d.doc_id).len()).sum();
    assert_eq!(idx.segments.len(), n_segs);
    let emb = HashedEmbedder::default();
    for d in corpus.docs() {
        let v = emb.embed(&d.summary).unwrap();
        let (id, dist) = idx.documents.nearest(&v).unwrap();
        assert_eq!(id, d.doc_id);
        assert!(dist < 1e-6);
        for s in idx.segments_of(&d.doc_id) {
            assert_eq!(&d.text[s.span.0..s.span.1], s.text);
            assert!(s.token_count > 0);
        }
    }
}

#[test]
fn dimension_mismatch_on_build() {
    let docs = VectorIndex::new(Level::Document, 4, "t");
    let seg = segment("d", 0, vec![1.0; 3], 1);
    assert!(matches!(
        TwoLevelIndex::from_parts(docs, vec![vec![seg]]),
        Err(IndexError::DimMismatch { .. })
    ));
}

#[test]
fn persisted_index_answers_identically() {
    let corpus = small_corpus();
    let idx = build_indexes(&corpus, &HashedEmbedder::default(), &ApproxTokenizer, 0.75).unwrap();
    let dir = tempfile::tempdir().unwrap();
    idx.save(dir.path()).unwrap();
    let back = TwoLevelIndex::load(dir.path()).unwrap();
    assert_eq!(back, idx);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let probe = random_unit(&mut rng, HashedEmbedder::DEFAULT_DIM);
        assert_eq!(idx.documents.nearest(&probe), back.documents.nearest(&probe));
        assert_eq!(idx.segments.nearest(&probe), back.segments.nearest(&probe));
    }
}

#[test]
fn index_build_is_deterministic() {
    let corpus = small_corpus();
    let a = build_indexes(&corpus, &HashedEmbedder::default(), &ApproxTokenizer, 0.75).unwrap();
    let b = build_indexes(&corpus, &HashedEmbedder::default(), &ApproxTokenizer, 0.75).unwrap();
    assert_eq!(a, b);
}

#[test]
fn euclidean_ranking_matches_cosine() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let q = random_unit(&mut rng, 32);
    let pts: Vec<Vec<f32>> = (0..1000).map(|_| random_unit(&mut rng, 32)).collect();
    for pair in pts.chunks(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let by_dist = distance(&q, a).partial_cmp(&distance(&q, b)).unwrap();
        let by_cos = cosine(&q, b).partial_cmp(&cosine(&q, a)).unwrap();
        if (cosine(&q, a) - cosine(&q, b)).abs() > 1e-9 {
            assert_eq!(by_dist, by_cos);
        }
    }
}

#[test]
fn state_round_trip() {
    let mut st = ThresholdState {
        tau: 0.45,
        calibrated: true,
        ..Default::default()
    };
    st.gamma.insert(
        "T.a".into(),
        GammaState {
            gamma: 0.6,
            fallback: false,
        },
    );
    let ev = EvidenceSet {
        attribute: "T.a".into(),
        centers: vec![e0()],
        source: EvidenceSource::Sampled,
    };
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("state.jsonl");
    retrieval::save_state(&p, &st, std::slice::from_ref(&ev)).unwrap();
    let (st2, ev2) = retrieval::load_state(&p).unwrap();
    assert_eq!(st2, st);
    assert_eq!(ev2, vec![ev]);
}

proptest! {
    #[test]
    fn document_retrieval_is_monotone(seed in 0u64..1000, t1 in 0.0f64..2.0, dt in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = VectorIndex::new(Level::Document, 8, "t");
        for i in 0..30 {
            idx.insert(&i.to_string(), random_unit(&mut rng, 8)).unwrap();
        }
        let q = random_unit(&mut rng, 8);
        let small = retrieve_documents(&idx, &q, t1);
        let large = retrieve_documents(&idx, &q, t1 + dt);
        prop_assert!(small.iter().all(|id| large.contains(id)));
    }

    #[test]
    fn segment_retrieval_is_monotone(g in 0.0f64..2.0, dg in 0.0f64..1.0) {
        let idx = planted_segments();
        let ev = EvidenceSet { attribute: "T.a".into(), centers: vec![e0()], source: EvidenceSource::Sampled };
        let small = retrieve_segments(&idx, "d", &ev, g).seg_ids();
        let large = retrieve_segments(&idx, "d", &ev, g + dg).seg_ids();
        prop_assert!(small.iter().all(|id| large.contains(id)));
    }
}
