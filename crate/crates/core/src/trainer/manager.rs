use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{GlamError, Result};
use crate::model::{from_f64_tensors, Checkpoint};
use crate::rng::SeedStream;
use crate::scalar::Scalar;

use super::log::RollbackEvent;
use super::step::Trainer;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointPolicy {
    /// Save a healthy checkpoint every this many optimizer steps.
    #[serde(default = "default_interval")]
    pub interval: u64,
    /// Divergence when the loss exceeds this multiple of the trailing median.
    #[serde(default = "default_threshold")]
    pub divergence_threshold: f64,
    #[serde(default = "default_window")]
    pub window: usize,
}

fn default_interval() -> u64 {
    100
}

fn default_threshold() -> f64 {
    3.0
}

fn default_window() -> usize {
    50
}

impl Default for CheckpointPolicy {
    fn default() -> Self {
        Self { interval: default_interval(), divergence_threshold: default_threshold(), window: default_window() }
    }
}

/// Keeps the last healthy checkpoint in memory and restores it when the loss
/// diverges.
#[derive(Clone, Debug)]
pub struct CheckpointManager {
    policy: CheckpointPolicy,
    seeds: SeedStream,
    healthy: Option<Checkpoint>,
    losses: VecDeque<f64>,
    rollbacks: u64,
}

impl CheckpointManager {
    /// `reshuffle_seed` roots the fresh batch-order seeds handed out on rollback.
    pub fn new(policy: CheckpointPolicy, reshuffle_seed: u64) -> Self {
        Self { policy, seeds: SeedStream::new(reshuffle_seed), healthy: None, losses: VecDeque::new(), rollbacks: 0 }
    }

    pub fn policy(&self) -> &CheckpointPolicy {
        &self.policy
    }

    pub fn latest(&self) -> Option<&Checkpoint> {
        self.healthy.as_ref()
    }

    pub fn rollback_count(&self) -> u64 {
        self.rollbacks
    }

    pub fn is_due(&self, optimizer_step: u64) -> bool {
        self.policy.interval > 0 && optimizer_step % self.policy.interval == 0
    }

    pub fn save<T: Scalar>(&mut self, trainer: &Trainer<T>) -> &Checkpoint {
        let mut ckpt = Checkpoint::from_model(&trainer.model);
        ckpt.optimizer = Some(trainer.optimizer.snapshot());
        ckpt.metadata = serde_json::json!({ "attempted_steps": trainer.attempted_steps() });
        self.healthy.insert(ckpt)
    }

    /// Whether `loss` counts as divergence against the trailing window.
    pub fn detect_divergence(&self, loss: f64) -> bool {
        if !loss.is_finite() {
            return true;
        }
        match median(&self.losses) {
            Some(m) => loss > self.policy.divergence_threshold * m,
            None => false,
        }
    }

    /// Records a loss; returns true (without recording it) if it diverges.
    pub fn observe(&mut self, loss: f64) -> bool {
        if self.detect_divergence(loss) {
            return true;
        }
        self.losses.push_back(loss);
        while self.losses.len() > self.policy.window.max(1) {
            self.losses.pop_front();
        }
        false
    }

    /// Restores model and optimizer from the last healthy checkpoint.
    pub fn rollback<T: Scalar>(&mut self, trainer: &mut Trainer<T>, trigger_loss: f64) -> Result<RollbackEvent> {
        let ckpt = self
            .healthy
            .as_ref()
            .ok_or_else(|| GlamError::Train("rollback requested before any checkpoint was saved".into()))?;
        trainer.model.load_values(&from_f64_tensors(&ckpt.params))?;
        let opt =
            ckpt.optimizer.as_ref().ok_or_else(|| GlamError::Checkpoint("checkpoint has no optimizer state".into()))?;
        trainer.optimizer.restore(opt)?;
        self.rollbacks += 1;
        Ok(RollbackEvent {
            detected_at: trainer.attempted_steps(),
            trigger_loss,
            restored_step: opt.step,
            reshuffle_seed: self.seeds.derive_seed(&format!("restart{}", self.rollbacks)),
        })
    }
}

fn median(values: &VecDeque<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = values.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manager() -> CheckpointManager {
        CheckpointManager::new(CheckpointPolicy::default(), 0)
    }

    #[test]
    fn nan_always_diverges() {
        let mut m = manager();
        assert!(!m.observe(2.0));
        assert!(!m.observe(2.0));
        assert!(m.observe(f64::NAN));
        assert!(m.detect_divergence(f64::INFINITY));
    }

    #[test]
    fn spike_over_threshold_diverges() {
        let mut m = manager();
        assert!(!m.observe(2.0));
        assert!(!m.observe(2.0));
        assert!(m.detect_divergence(7.0));
        assert!(!m.detect_divergence(6.0));
        assert!(!m.observe(5.9));
    }

    #[test]
    fn window_is_trailing() {
        let mut m = CheckpointManager::new(CheckpointPolicy { window: 3, ..Default::default() }, 0);
        for l in [100.0, 1.0, 1.0, 1.0] {
            assert!(!m.observe(l));
        }
        assert!(m.detect_divergence(3.5));
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&VecDeque::from(vec![3.0, 1.0, 2.0])), Some(2.0));
        assert_eq!(median(&VecDeque::from(vec![4.0, 1.0, 2.0, 3.0])), Some(2.5));
        assert_eq!(median(&VecDeque::new()), None);
    }
}
