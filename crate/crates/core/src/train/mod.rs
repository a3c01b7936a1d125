//! Optimizers for the toy encoder and the pair-classification head: InfoNCE
//! contrastive training and binary cross-entropy pair classification. All
//! training is plain minibatch gradient descent, single-writer over the
//! parameters, and bit-reproducible given (seed, config, data).

mod checkpoint;
mod classifier;
mod infonce;
mod schedule;

pub use checkpoint::{
    load_encoder_checkpoint, load_scorer_checkpoint, save_encoder_checkpoint,
    save_scorer_checkpoint,
};
pub use classifier::{bce_loss, score_pair, train_classifier, ClassifierOutcome, PairScorerParams};
pub use infonce::{
    infonce_grad, infonce_loss, infonce_loss_texts, train_contrastive, GradOutcome, TrainOutcome,
};
pub use schedule::StlrSchedule;

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// InfoNCE training configuration. `k_negatives` is how many other in-batch
/// candidates join each anchor's softmax denominator; when it reaches
/// `batch_size - 1` the whole batch is used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub k_negatives: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Average the anchor->candidate loss with the candidate->anchor
    /// direction.
    pub symmetric: bool,
    /// Softmax temperature over the cosine similarities. The loss is defined
    /// on raw cosines; this knob exists for extension and defaults to 1
    /// (no effect).
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

fn default_temperature() -> f64 {
    1.0
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            k_negatives: 16,
            batch_size: 32,
            learning_rate: 2e-6,
            epochs: 1,
            seed: 0,
            symmetric: true,
            temperature: 1.0,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Validation(format!(
                "batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if self.k_negatives < 1 || self.k_negatives > self.batch_size - 1 {
            return Err(Error::Validation(format!(
                "k_negatives must be in 1..=batch_size-1, got {} with batch_size {}",
                self.k_negatives, self.batch_size
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Validation(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Validation(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Pair-classifier training configuration (slanted-triangular LR schedule).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub scheduler: StlrSchedule,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 32,
            epochs: 3,
            scheduler: StlrSchedule::default(),
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Validation("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Validation(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        self.scheduler.validate()
    }
}

/// A batch loss: the mean plus the per-example terms it averages.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub per_example: Vec<f64>,
}

impl LossValue {
    pub(crate) fn from_per_example(per_example: Vec<f64>) -> Self {
        let value = per_example.iter().sum::<f64>() / per_example.len() as f64;
        Self { value, per_example }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeldoutEntry {
    pub epoch: usize,
    pub heldout_loss: f64,
}

/// Step-by-step training record, written as JSON lines.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<TrainLogEntry>,
    pub heldout: Vec<HeldoutEntry>,
}

impl TrainLog {
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = fs::File::create(path.as_ref())?;
        for entry in &self.steps {
            writeln!(out, "{}", serde_json::to_string(entry)?)?;
        }
        for entry in &self.heldout {
            writeln!(out, "{}", serde_json::to_string(entry)?)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contrastive_defaults_match_documented_values() {
        let cfg = ContrastiveConfig::default();
        assert_eq!(cfg.k_negatives, 16);
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.learning_rate, 2e-6);
        assert!(cfg.symmetric);
        cfg.validate().unwrap();
    }

    #[test]
    fn classifier_defaults_match_documented_values() {
        let cfg = ClassifierConfig::default();
        assert_eq!(cfg.learning_rate, 1e-4);
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.scheduler.warmup_frac, 0.1);
        assert_eq!(cfg.scheduler.floor_ratio, 1.0 / 32.0);
        cfg.validate().unwrap();
    }

    #[test]
    fn k_must_fit_the_batch() {
        let cfg = ContrastiveConfig {
            k_negatives: 32,
            batch_size: 16,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ContrastiveConfig {
            k_negatives: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn loss_value_is_mean_of_per_example() {
        let loss = LossValue::from_per_example(vec![1.0, 0.5]);
        assert_eq!(loss.value, 0.75);
    }
}
