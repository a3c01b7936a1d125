//! Shared fixtures for the criterion benchmarks.

use jobmatch_core::synthetic::{task_a_corpus, SyntheticCorpus};

/// A mid-sized deterministic corpus: 100 clusters, 400 knowledge-base titles.
pub fn bench_corpus() -> SyntheticCorpus {
    task_a_corpus(0, 100)
}
