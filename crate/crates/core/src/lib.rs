//! jobmatch-core: multilingual job-title matching and job-title-to-skill
//! prediction under three interchangeable paradigms — binary-classification
//! reranking, InfoNCE contrastive embedding training, and zero-shot
//! prompt-prefixed embedding retrieval — plus the data preparation and
//! mean-average-precision evaluation around them.
//!
//! The crate is organized along the pipeline:
//!
//! - [`corpus`] — ESCO-style entities, knowledge bases, qrels, raw pairs
//! - [`pairs`] — labeled and contrastive training-set construction
//! - [`embedding`] — the trainable hashed n-gram encoder, cosine similarity,
//!   and the binary exchange format for external embedding backends
//! - [`train`] — InfoNCE and pair-classifier optimization
//! - [`rank`] — full-KB ranking and TREC run files
//! - [`eval`] — MAP, per-language/pair/major-group reports, coverage
//! - [`pipeline`] — config-driven orchestration with manifests and grid search
//! - [`synthetic`] — a deterministic desk-scale corpus for end-to-end runs

pub mod corpus;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod pairs;
pub mod pipeline;
pub mod rank;
pub mod synthetic;
pub mod text;
pub mod train;

pub use corpus::{CorpusEntity, GoldStandard, KnowledgeBase, RawPairSet};
pub use embedding::{EmbeddingMatrix, PromptTemplate, ToyEncoderParams};
pub use error::{Error, Result};
pub use eval::EvalReport;
pub use pairs::{ContrastivePair, LabeledPair, SamplerConfig, Task};
pub use rank::{RankedList, RunFile};
pub use train::{ClassifierConfig, ContrastiveConfig, LossValue, PairScorerParams};
