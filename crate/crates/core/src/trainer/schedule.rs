use serde::{Deserialize, Serialize};

use crate::error::{GlamError, Result};

pub const DEFAULT_BASE_LR: f64 = 0.01;

/// Constant learning rate through warmup, then inverse square-root decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
}

impl LrSchedule {
    pub fn new(base_lr: f64, warmup_steps: u64) -> Self {
        Self { base_lr, warmup_steps }
    }

    /// Learning rate at 1-based step `t`.
    pub fn lr(&self, t: u64) -> Result<f64> {
        if t == 0 {
            return Err(GlamError::config("learning-rate schedule is defined from step 1"));
        }
        if t <= self.warmup_steps {
            Ok(self.base_lr)
        } else {
            Ok(self.base_lr * (self.warmup_steps as f64 / t as f64).sqrt())
        }
    }
}

/// Warmup scaled to the run: 1% of the total steps, at least 10.
pub fn default_warmup(total_steps: u64) -> u64 {
    (total_steps / 100).max(10)
}
