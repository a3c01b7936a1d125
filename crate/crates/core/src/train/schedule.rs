//! Slanted-triangular learning-rate schedule: a short linear warmup to the
//! peak rate followed by a long linear decay to the floor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// lr(t) = lr_max * (1 + p(t) * (r - 1)) / r with r = 1 / floor_ratio and
/// p rising linearly from 0 to 1 over `warmup_frac` of the total steps, then
/// falling linearly back to 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StlrSchedule {
    pub warmup_frac: f64,
    pub floor_ratio: f64,
}

impl Default for StlrSchedule {
    fn default() -> Self {
        Self {
            warmup_frac: 0.1,
            floor_ratio: 1.0 / 32.0,
        }
    }
}

impl StlrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.warmup_frac) {
            return Err(Error::Validation(format!(
                "warmup_frac must be in [0, 1], got {}",
                self.warmup_frac
            )));
        }
        if !(self.floor_ratio > 0.0 && self.floor_ratio <= 1.0) {
            return Err(Error::Validation(format!(
                "floor_ratio must be in (0, 1], got {}",
                self.floor_ratio
            )));
        }
        Ok(())
    }

    /// Learning rate at `step` of `total_steps`.
    pub fn lr_at(&self, lr_max: f64, step: usize, total_steps: usize) -> f64 {
        if total_steps == 0 {
            return lr_max;
        }
        let total = total_steps as f64;
        let warmup = self.warmup_frac * total;
        let t = (step as f64).min(total);
        let p = if warmup > 0.0 && t < warmup {
            t / warmup
        } else if total - warmup <= 0.0 {
            1.0
        } else {
            (1.0 - (t - warmup) / (total - warmup)).clamp(0.0, 1.0)
        };
        let r = 1.0 / self.floor_ratio;
        lr_max * (1.0 + p * (r - 1.0)) / r
    }
}
