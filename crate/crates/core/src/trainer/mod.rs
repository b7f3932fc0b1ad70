//! Optimization loop: Adafactor, learning-rate schedule, non-finite step
//! skipping, and checkpoint rollback on divergence.

mod adafactor;
mod log;
mod manager;
mod schedule;
mod source;
mod step;

pub use adafactor::{Adafactor, AdafactorConfig};
pub use log::{RollbackEvent, StepRecord, TrainLog};
pub use manager::{CheckpointManager, CheckpointPolicy};
pub use schedule::{default_warmup, LrSchedule, DEFAULT_BASE_LR};
pub use source::{BatchSource, MarkovTokens, ShuffledBatches, UniformTokens};
pub use step::{mean_cross_entropy, StepGradients, TrainConfig, Trainer, DEFAULT_AUX_COEFF};

use crate::error::Result;
use crate::scalar::Scalar;

/// Runs `steps` training steps, logging each one. With a manager, a healthy
/// checkpoint is kept every `interval` updates and a divergent loss rolls the
/// run back and reshuffles the batch order.
pub fn run<T: Scalar>(
    trainer: &mut Trainer<T>,
    source: &mut dyn BatchSource,
    steps: u64,
    mut manager: Option<&mut CheckpointManager>,
    log: &mut TrainLog,
) -> Result<()> {
    if let Some(m) = manager.as_deref_mut() {
        if m.latest().is_none() {
            m.save(trainer);
        }
    }
    for _ in 0..steps {
        let batch = source.next_batch()?;
        let grads = trainer.compute_gradients(&batch)?;
        let mut record = trainer.apply(grads)?;
        if let Some(m) = manager.as_deref_mut() {
            if m.observe(record.loss) {
                let event = m.rollback(trainer, record.loss)?;
                source.reshuffle(event.reshuffle_seed);
                record.optimizer_step = trainer.optimizer.step();
                record.rollback = Some(event);
            } else if !record.skipped && m.is_due(trainer.optimizer.step()) {
                m.save(trainer);
            }
        }
        log.push(record);
    }
    Ok(())
}
