//! Property tests for the documented invariants: metric bounds and
//! insensitivity, cosine scale invariance, InfoNCE bounds, sampler hygiene,
//! ranking insensitivity to rescaling, and file-format round trips.

use std::collections::BTreeSet;

use ndarray::Array2;
use proptest::prelude::*;

use jobmatch_core::corpus::{load_entities, write_entities, CorpusEntity, EntityType, LabelSet};
use jobmatch_core::embedding::{
    cosine, encode, similarity_matrix, EmbeddingMatrix, ToyEncoderParams,
};
use jobmatch_core::eval::average_precision;
use jobmatch_core::pairs::{make_classification_set, PoolKind, SamplerConfig};
use jobmatch_core::rank::{read_run, write_run, RankedList, RunFile};
use jobmatch_core::train::{infonce_loss, ContrastiveConfig};
use jobmatch_core::RawPairSet;

fn arb_scores(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 1..=max_len)
}

fn ranked_list(scores: &[f64]) -> RankedList {
    let scored = scores
        .iter()
        .enumerate()
        .map(|(i, s)| (format!("d{i}"), *s))
        .collect();
    RankedList::from_scores("q", scored).unwrap()
}

proptest! {
    #[test]
    fn ap_is_bounded(scores in arb_scores(60), gold_bits in prop::collection::vec(any::<bool>(), 60)) {
        let list = ranked_list(&scores);
        let gold: BTreeSet<String> = gold_bits
            .iter()
            .take(scores.len())
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(i, _)| format!("d{i}"))
            .collect();
        prop_assume!(!gold.is_empty());
        let ap = average_precision(&list, &gold).unwrap();
        prop_assert!((0.0..=1.0).contains(&ap));
    }

    /// AP is 1 exactly when the golds occupy the top |gold| ranks.
    #[test]
    fn ap_is_one_iff_golds_lead(n in 2usize..40, k in 1usize..10) {
        let k = k.min(n - 1);
        // Golds on top.
        let scored: Vec<(String, f64)> = (0..n).map(|i| (format!("d{i}"), 1.0 - i as f64 * 0.01)).collect();
        let list = RankedList::from_scores("q", scored).unwrap();
        let top_gold: BTreeSet<String> = (0..k).map(|i| format!("d{i}")).collect();
        prop_assert_eq!(average_precision(&list, &top_gold).unwrap(), 1.0);
        // Any gold displaced from the top block drops AP below 1.
        let mut displaced: BTreeSet<String> = (0..k - 1).map(|i| format!("d{i}")).collect();
        displaced.insert(format!("d{}", n - 1));
        prop_assert!(average_precision(&list, &displaced).unwrap() < 1.0);
    }

    /// Permuting documents ranked below the last gold never changes AP.
    #[test]
    fn ap_ignores_tail_permutations(n in 5usize..40, seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let gold: BTreeSet<String> = ["d0", "d2"].iter().map(|s| s.to_string()).collect();
        let head: Vec<String> = (0..3).map(|i| format!("d{i}")).collect();
        let mut tail: Vec<String> = (3..n).map(|i| format!("d{i}")).collect();
        let scored = |docs: &[String]| -> Vec<(String, f64)> {
            docs.iter().enumerate().map(|(i, d)| (d.clone(), 1.0 - i as f64 * 0.01)).collect()
        };
        let mut docs = head.clone();
        docs.extend(tail.clone());
        let base = average_precision(&RankedList::from_scores("q", scored(&docs)).unwrap(), &gold).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        tail.shuffle(&mut rng);
        let mut docs = head;
        docs.extend(tail);
        let shuffled = average_precision(&RankedList::from_scores("q", scored(&docs)).unwrap(), &gold).unwrap();
        prop_assert_eq!(base, shuffled);
    }

    #[test]
    fn cosine_scale_invariant(
        u in prop::collection::vec(-10.0f64..10.0, 3..8),
        alpha in 0.01f64..100.0,
        beta in 0.01f64..100.0,
    ) {
        let v: Vec<f64> = u.iter().rev().map(|x| x + 0.5).collect();
        prop_assume!(u.iter().any(|x| *x != 0.0) && v.iter().any(|x| *x != 0.0));
        let base = cosine(&u, &v).unwrap();
        let su: Vec<f64> = u.iter().map(|x| x * alpha).collect();
        let sv: Vec<f64> = v.iter().map(|x| x * beta).collect();
        prop_assert!((cosine(&su, &sv).unwrap() - base).abs() < 1e-9);
    }

    /// Normalized, deduplicated rows: self-similarity matrix is symmetric
    /// with a unit diagonal.
    #[test]
    fn self_similarity_is_symmetric(seed in any::<u64>(), n in 2usize..8, d in 2usize..6) {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Array2::zeros((n, d));
        for mut row in rows.outer_iter_mut() {
            loop {
                for x in row.iter_mut() {
                    *x = rng.random::<f64>() * 2.0 - 1.0;
                }
                let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-6 {
                    row.mapv_inplace(|x| x / norm);
                    break;
                }
            }
        }
        let ids = (0..n).map(|i| i.to_string()).collect();
        let m = EmbeddingMatrix::new(ids, rows, true).unwrap();
        let sims = similarity_matrix(&m, &m).unwrap();
        for i in 0..n {
            prop_assert!((sims[(i, i)] - 1.0).abs() < 1e-9);
            for j in 0..n {
                prop_assert!((sims[(i, j)] - sims[(j, i)]).abs() < 1e-12);
            }
        }
    }

    /// InfoNCE is non-negative, hits ln N on uniform similarities, and obeys
    /// the cosine-range lower bound ln(1 + (D-1) e^-2).
    #[test]
    fn infonce_bounds(seed in any::<u64>(), n in 2usize..10, d in 2usize..6) {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let gen = |rng: &mut rand_chacha::ChaCha8Rng| {
            Array2::from_shape_fn((n, d), |_| loop {
                let x = rng.random::<f64>() * 2.0 - 1.0;
                if x.abs() > 1e-3 {
                    break x;
                }
            })
        };
        let u = gen(&mut rng);
        let v = gen(&mut rng);
        let ids: Vec<String> = (0..n).map(|i| i.to_string()).collect();
        let mu = EmbeddingMatrix::new(ids.clone(), u, false).unwrap();
        let mv = EmbeddingMatrix::new(ids, v, false).unwrap();
        let cfg = ContrastiveConfig {
            k_negatives: n - 1,
            batch_size: n.max(2),
            symmetric: false,
            ..Default::default()
        };
        let loss = infonce_loss(&mu, &mv, &cfg).unwrap();
        let lower = (1.0 + (n as f64 - 1.0) * (-2.0f64).exp()).ln();
        for &l in &loss.per_example {
            prop_assert!(l >= 0.0);
            prop_assert!(l >= lower - 1e-12, "per-example {l} below bound {lower}");
        }

        // Uniform similarities: all rows equal.
        let row: Vec<f64> = (0..d).map(|i| (i + 1) as f64).collect();
        let uniform = Array2::from_shape_fn((n, d), |(_, j)| row[j]);
        let ids: Vec<String> = (0..n).map(|i| i.to_string()).collect();
        let mu = EmbeddingMatrix::new(ids.clone(), uniform.clone(), false).unwrap();
        let mv = EmbeddingMatrix::new(ids, uniform, false).unwrap();
        let loss = infonce_loss(&mu, &mv, &cfg).unwrap();
        prop_assert!((loss.value - (n as f64).ln()).abs() < 1e-9);
    }

    /// Sampled negatives never collide with the query's gold set, under any
    /// seed and ratio.
    #[test]
    fn sampler_never_emits_gold(seed in any::<u64>(), ratio in 0.5f64..6.0) {
        let mut rows = Vec::new();
        for q in 0..6 {
            rows.push((format!("q{q}"), format!("gold {q}")));
            rows.push((format!("q{q}"), format!("gold {q} bis")));
        }
        for f in 0..40 {
            rows.push(("feeder".to_string(), format!("pool {f}")));
        }
        let set = RawPairSet { language: "en".into(), pairs: rows.clone() };
        let cfg = SamplerConfig::new(ratio, seed, PoolKind::Titles).unwrap();
        let (out, _) = make_classification_set(&set, &cfg).unwrap();
        for pair in out.iter().filter(|p| !p.is_positive()) {
            let is_gold = rows.iter().any(|(q, r)| q == &pair.query && r == &pair.document);
            prop_assert!(!is_gold, "negative ({}, {}) is gold", pair.query, pair.document);
            prop_assert_ne!(&pair.query, &pair.document);
        }
    }

    /// Rescaling the whole embedding space never changes the ranking.
    #[test]
    fn ranking_invariant_under_rescaling(seed in any::<u64>(), scale in 0.01f64..50.0) {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n_docs = 12;
        let d = 4;
        let docs = Array2::from_shape_fn((n_docs, d), |_| loop {
            let x = rng.random::<f64>() * 2.0 - 1.0;
            if x.abs() > 1e-3 {
                break x;
            }
        });
        let queries = Array2::from_shape_fn((3, d), |_| rng.random::<f64>() + 0.1);
        let doc_ids: Vec<String> = (0..n_docs).map(|i| format!("d{i}")).collect();
        let query_ids: Vec<String> = (0..3).map(|i| format!("q{i}")).collect();
        let run = jobmatch_core::rank::rank_by_matrices(
            &EmbeddingMatrix::new(query_ids.clone(), queries.clone(), false).unwrap(),
            &EmbeddingMatrix::new(doc_ids.clone(), docs.clone(), false).unwrap(),
            "t",
        )
        .unwrap();
        let scaled_run = jobmatch_core::rank::rank_by_matrices(
            &EmbeddingMatrix::new(query_ids, queries.mapv(|x| x * scale), false).unwrap(),
            &EmbeddingMatrix::new(doc_ids, docs.mapv(|x| x * scale), false).unwrap(),
            "t",
        )
        .unwrap();
        for (a, b) in run.lists.iter().zip(&scaled_run.lists) {
            let ids_a: Vec<&str> = a.doc_ids().collect();
            let ids_b: Vec<&str> = b.doc_ids().collect();
            prop_assert_eq!(ids_a, ids_b);
        }
    }

    /// TREC run files round-trip: read(write(run)) == run and a second write
    /// is byte-identical (scores on the 1e-6 grid survive the format).
    #[test]
    fn run_file_round_trip(
        n_queries in 1usize..5,
        n_docs in 1usize..12,
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let lists: Vec<RankedList> = (0..n_queries)
            .map(|q| {
                let scored: Vec<(String, f64)> = (0..n_docs)
                    .map(|d| {
                        let milli = rng.random_range(-1_000_000i64..=1_000_000);
                        (format!("d{d}"), milli as f64 / 1e6)
                    })
                    .collect();
                RankedList::from_scores(format!("q{q}"), scored).unwrap()
            })
            .collect();
        let run = RunFile::new("prop", lists).unwrap();
        let dir = tempfile::TempDir::new().unwrap();
        let path = dir.path().join("run.txt");
        write_run(&path, &run).unwrap();
        let back = read_run(&path).unwrap();
        prop_assert_eq!(&back, &run);
        let path2 = dir.path().join("run2.txt");
        write_run(&path2, &back).unwrap();
        prop_assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    /// Encoding is a pure function: identical inputs, identical matrix.
    #[test]
    fn encode_is_pure(seed in any::<u64>(), texts in prop::collection::vec("[a-z ]{0,20}", 1..6)) {
        let params = ToyEncoderParams::init(64, 8, seed).unwrap();
        let a = encode(&texts, &params, None, false).unwrap();
        let b = encode(&texts, &params, None, false).unwrap();
        prop_assert_eq!(a.vectors(), b.vectors());
    }
}

fn arb_entities() -> impl Strategy<Value = Vec<CorpusEntity>> {
    let label = "[a-z][a-z0-9]{0,11}";
    prop::collection::vec(
        (
            label,
            prop::bool::ANY,
            prop::option::of(0u32..10000),
            prop::collection::vec(label, 0..3),
            prop::option::of(label),
        ),
        1..6,
    )
    .prop_map(|specs| {
        specs
            .into_iter()
            .enumerate()
            .map(|(i, (preferred, is_occupation, code, alts, description))| {
                let mut labels = std::collections::BTreeMap::new();
                // Suffixes keep alternatives distinct from each other and the
                // preferred label after case folding.
                let alternatives = alts
                    .into_iter()
                    .enumerate()
                    .map(|(j, a)| format!("{a} alt{j}"))
                    .collect();
                labels.insert(
                    "en".to_string(),
                    LabelSet {
                        preferred,
                        alternatives,
                        description,
                    },
                );
                CorpusEntity {
                    entity_id: format!("e{i}"),
                    entity_type: if is_occupation {
                        EntityType::Occupation
                    } else {
                        EntityType::Skill
                    },
                    esco_code: code.map(|c| format!("{}", 1000 + c)),
                    labels,
                }
            })
            .collect()
    })
}

proptest! {
    /// Entities survive write -> load, and a second write is byte-identical.
    #[test]
    fn entities_round_trip(entities in arb_entities()) {
        let dir = tempfile::TempDir::new().unwrap();
        let path = dir.path().join("entities.tsv");
        write_entities(&path, &entities).unwrap();
        let loaded = load_entities(&path).unwrap();
        prop_assert_eq!(&loaded, &entities);
        let path2 = dir.path().join("entities2.tsv");
        write_entities(&path2, &loaded).unwrap();
        prop_assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }
}
