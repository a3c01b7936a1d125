//! Config-driven orchestration: ingest -> pairs -> train -> embed -> rank ->
//! eval -> analyze, each stage writing its artifacts plus a manifest of input
//! hashes, and a grid search over training configurations.

mod config;
mod grid;
mod manifest;
mod stages;

pub use config::{Method, PipelineConfig};
pub use grid::{expand_grid, run_gridsearch, GridCell, Leaderboard};
pub use manifest::{sha256_file, Manifest};
pub use stages::{
    run_analyze, run_embed, run_eval, run_ingest, run_pairs, run_rank, run_train, StageReport,
};
