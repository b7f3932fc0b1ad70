use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{GlamModel, TokenBatch};
use crate::moe::DispatchStats;
use crate::numerics::{Tape, Tensor};
use crate::scalar::Scalar;

use super::adafactor::{Adafactor, AdafactorConfig};
use super::log::{RollbackEvent, StepRecord};
use super::schedule::{default_warmup, LrSchedule, DEFAULT_BASE_LR};

pub const DEFAULT_AUX_COEFF: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_aux_coeff")]
    pub aux_coeff: f64,
    #[serde(default = "default_base_lr")]
    pub base_lr: f64,
    /// Defaults to [`default_warmup`] of `total_steps` when absent.
    #[serde(default)]
    pub warmup_steps: Option<u64>,
    pub total_steps: u64,
    /// Targets equal to this id (padding) carry no loss.
    #[serde(default)]
    pub ignore_token: Option<u32>,
    #[serde(default)]
    pub adafactor: AdafactorConfig,
}

fn default_aux_coeff() -> f64 {
    DEFAULT_AUX_COEFF
}

fn default_base_lr() -> f64 {
    DEFAULT_BASE_LR
}

impl TrainConfig {
    pub fn new(total_steps: u64) -> Self {
        Self {
            aux_coeff: DEFAULT_AUX_COEFF,
            base_lr: DEFAULT_BASE_LR,
            warmup_steps: None,
            total_steps,
            ignore_token: None,
            adafactor: AdafactorConfig::default(),
        }
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule::new(self.base_lr, self.warmup_steps.unwrap_or_else(|| default_warmup(self.total_steps)))
    }
}

/// Loss terms and parameter gradients of one batch, before any update.
#[derive(Clone, Debug)]
pub struct StepGradients<T> {
    pub loss: f64,
    pub ce_loss: f64,
    pub aux_loss: f64,
    /// One gradient per model parameter, in parameter order.
    pub grads: Vec<Tensor<T>>,
    pub stats: Vec<DispatchStats>,
}

impl<T: Scalar> StepGradients<T> {
    pub fn all_finite(&self) -> bool {
        self.grads.iter().all(|g| g.is_finite())
    }
}

#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub model: GlamModel<T>,
    pub optimizer: Adafactor<T>,
    pub config: TrainConfig,
    schedule: LrSchedule,
    /// Attempted steps, including skipped ones; never rewound.
    attempted: u64,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: GlamModel<T>, config: TrainConfig) -> Self {
        let optimizer = Adafactor::new(model.params(), config.adafactor);
        let schedule = config.schedule();
        Self { model, optimizer, config, schedule, attempted: 0 }
    }

    pub fn schedule(&self) -> &LrSchedule {
        &self.schedule
    }

    pub fn attempted_steps(&self) -> u64 {
        self.attempted
    }

    /// Total loss `ce + aux_coeff · aux` and its gradients.
    pub fn compute_gradients(&self, batch: &TokenBatch) -> Result<StepGradients<T>> {
        let mut tape = Tape::new();
        let (out, vars) = self.model.forward(&mut tape, batch)?;
        let targets = batch.next_token_targets(self.config.ignore_token);
        let ce = tape.cross_entropy(out.logits, &targets)?;
        let total = if self.config.aux_coeff == 0.0 {
            ce
        } else {
            let aux = tape.scale(out.aux_loss, T::of(self.config.aux_coeff));
            tape.add(ce, aux)?
        };
        let mut grads = tape.backward(total);
        Ok(StepGradients {
            loss: tape.value(total).data()[0].as_f64(),
            ce_loss: tape.value(ce).data()[0].as_f64(),
            aux_loss: tape.value(out.aux_loss).data()[0].as_f64(),
            grads: vars.iter().map(|&v| grads.take(v)).collect(),
            stats: out.stats,
        })
    }

    /// Applies the update unless a gradient element is NaN or infinite, in
    /// which case nothing changes and the record is marked skipped.
    pub fn apply(&mut self, step: StepGradients<T>) -> Result<StepRecord> {
        self.attempted += 1;
        let t = self.optimizer.step() + 1;
        let lr = self.schedule.lr(t)?;
        let skipped = !step.all_finite();
        if !skipped {
            self.optimizer.update(self.model.params_mut(), &step.grads, lr)?;
        }
        let expert_load: Vec<Vec<f64>> = step.stats.iter().map(|s| s.fractions()).collect();
        Ok(StepRecord {
            step: self.attempted,
            optimizer_step: self.optimizer.step(),
            loss: step.loss,
            ce_loss: step.ce_loss,
            aux_loss: step.aux_loss,
            lr,
            skipped,
            max_expert_fraction: step.stats.iter().map(|s| s.max_fraction()).fold(0.0, f64::max),
            dropped_tokens: step.stats.iter().map(|s| s.dropped_tokens).sum(),
            expert_load,
            rollback: None::<RollbackEvent>,
        })
    }

    pub fn train_step(&mut self, batch: &TokenBatch) -> Result<StepRecord> {
        let grads = self.compute_gradients(batch)?;
        self.apply(grads)
    }

    /// Mean next-token cross-entropy over `batches` without updating.
    pub fn eval_loss(&self, batches: &[TokenBatch]) -> Result<f64> {
        mean_cross_entropy(&self.model, batches, self.config.ignore_token)
    }
}

/// Token-weighted mean cross-entropy of `model` over `batches`.
pub fn mean_cross_entropy<T: Scalar>(model: &GlamModel<T>, batches: &[TokenBatch], ignore: Option<u32>) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for b in batches {
        let mut tape = Tape::new();
        let (out, _) = model.forward(&mut tape, b)?;
        let targets = b.next_token_targets(ignore);
        let n = targets.iter().filter(|t| t.is_some()).count();
        let ce = tape.cross_entropy(out.logits, &targets)?;
        total += tape.value(ce).data()[0].as_f64() * n as f64;
        count += n;
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}
