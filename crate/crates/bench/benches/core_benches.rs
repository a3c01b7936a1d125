use std::collections::BTreeSet;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use jobmatch_bench::bench_corpus;
use jobmatch_core::embedding::{encode, ToyEncoderParams};
use jobmatch_core::eval::average_precision;
use jobmatch_core::pairs::{make_contrastive_set, Task};
use jobmatch_core::rank::{rank_by_embedding, RankedList};
use jobmatch_core::train::{infonce_grad, infonce_loss_texts, ContrastiveConfig};

fn bench_encode(c: &mut Criterion) {
    let corpus = bench_corpus();
    let params = ToyEncoderParams::init(2048, 32, 0).unwrap();
    let texts: Vec<&str> = corpus.kb.entries.iter().map(|(_, t)| t.as_str()).collect();
    c.bench_function("encode_400_titles_d32", |b| {
        b.iter(|| encode(black_box(&texts), &params, None, true).unwrap())
    });
}

fn bench_infonce(c: &mut Criterion) {
    let corpus = bench_corpus();
    let (pairs, _) =
        make_contrastive_set(&corpus.entities, Task::A, &["en".to_string()], None).unwrap();
    let batch: Vec<_> = pairs.iter().take(32).cloned().collect();
    let params = ToyEncoderParams::init(2048, 32, 0).unwrap();
    let cfg = ContrastiveConfig {
        k_negatives: 16,
        batch_size: 32,
        ..Default::default()
    };
    c.bench_function("infonce_loss_batch32", |b| {
        b.iter(|| infonce_loss_texts(black_box(&batch), &params, &cfg).unwrap())
    });
    c.bench_function("infonce_grad_batch32", |b| {
        b.iter(|| infonce_grad(black_box(&batch), &params, &cfg).unwrap())
    });
}

fn bench_average_precision(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let scored: Vec<(String, f64)> = (0..10_000)
        .map(|d| (format!("d{d}"), rng.random::<f64>()))
        .collect();
    let ranking = RankedList::from_scores("q", scored).unwrap();
    let gold: BTreeSet<String> = (0..50)
        .map(|_| format!("d{}", rng.random_range(0..10_000)))
        .collect();
    c.bench_function("average_precision_10k_docs", |b| {
        b.iter(|| average_precision(black_box(&ranking), black_box(&gold)).unwrap())
    });
}

fn bench_rank(c: &mut Criterion) {
    let corpus = bench_corpus();
    let params = ToyEncoderParams::init(2048, 32, 0).unwrap();
    c.bench_function("rank_100_queries_over_400_docs", |b| {
        b.iter_batched(
            || (corpus.queries.clone(), corpus.kb.clone()),
            |(queries, kb)| rank_by_embedding(&queries, &kb, &params, None, "bench").unwrap(),
            BatchSize::LargeInput,
        )
    });
}

criterion_group!(
    benches,
    bench_encode,
    bench_infonce,
    bench_average_precision,
    bench_rank
);
criterion_main!(benches);
