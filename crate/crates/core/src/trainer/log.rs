use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RollbackEvent {
    /// Attempted-step index at which divergence was detected.
    pub detected_at: u64,
    pub trigger_loss: f64,
    /// Optimizer step of the restored checkpoint.
    pub restored_step: u64,
    /// Fresh seed for the batch order after the restart.
    pub reshuffle_seed: u64,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub optimizer_step: u64,
    pub loss: f64,
    pub ce_loss: f64,
    pub aux_loss: f64,
    pub lr: f64,
    pub skipped: bool,
    pub max_expert_fraction: f64,
    pub dropped_tokens: usize,
    /// Top-1 routing fractions per MoE layer.
    pub expert_load: Vec<Vec<f64>>,
    pub rollback: Option<RollbackEvent>,
}

/// Append-only record of a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    records: Vec<StepRecord>,
}

impl TrainLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: StepRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn rollbacks(&self) -> impl Iterator<Item = &RollbackEvent> {
        self.records.iter().filter_map(|r| r.rollback.as_ref())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_jsonl()?.as_bytes())?;
        Ok(())
    }
}
