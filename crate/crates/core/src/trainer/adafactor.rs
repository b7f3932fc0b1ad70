//! Adafactor without momentum: factored second moments for matrices, a full
//! accumulator for vectors and scalars, and RMS update clipping.

use serde::{Deserialize, Serialize};

use crate::error::{GlamError, Result};
use crate::model::{to_f64_tensors, NamedTensors, OptimizerSnapshot, Param};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdafactorConfig {
    /// `β̂₂(t) = min(beta2_max, 1 − t^−decay_exponent)`.
    pub decay_exponent: f64,
    pub beta2_max: f64,
    /// Added to squared gradients.
    pub eps1: f64,
    /// Updates are scaled down so their RMS does not exceed this.
    pub clip_threshold: f64,
}

impl Default for AdafactorConfig {
    fn default() -> Self {
        Self { decay_exponent: 0.8, beta2_max: 0.99, eps1: 1e-30, clip_threshold: 1.0 }
    }
}

impl AdafactorConfig {
    pub fn beta2(&self, t: u64) -> f64 {
        (1.0 - (t as f64).powf(-self.decay_exponent)).min(self.beta2_max)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Moment<T> {
    Factored { rows: Vec<T>, cols: Vec<T> },
    Full(Vec<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adafactor<T> {
    config: AdafactorConfig,
    step: u64,
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    moments: Vec<Moment<T>>,
}

impl<T: Scalar> Adafactor<T> {
    pub fn new(params: &[Param<T>], config: AdafactorConfig) -> Self {
        let moments = params
            .iter()
            .map(|p| match p.value.shape() {
                &[r, c] => Moment::Factored { rows: vec![T::zero(); r], cols: vec![T::zero(); c] },
                _ => Moment::Full(vec![T::zero(); p.value.len()]),
            })
            .collect();
        Self {
            config,
            step: 0,
            names: params.iter().map(|p| p.name.clone()).collect(),
            shapes: params.iter().map(|p| p.value.shape().to_vec()).collect(),
            moments,
        }
    }

    pub fn config(&self) -> &AdafactorConfig {
        &self.config
    }

    /// Number of updates applied so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Applies one update with learning rate `lr`. Gradients must be finite;
    /// callers skip the step otherwise.
    pub fn update(&mut self, params: &mut [Param<T>], grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != self.moments.len() || grads.len() != params.len() {
            return Err(GlamError::Shape {
                op: "adafactor",
                lhs: vec![params.len(), grads.len()],
                rhs: vec![self.moments.len()],
            });
        }
        for ((p, g), shape) in params.iter().zip(grads).zip(&self.shapes) {
            if p.value.shape() != shape.as_slice() || g.shape() != shape.as_slice() {
                return Err(GlamError::Shape {
                    op: "adafactor",
                    lhs: p.value.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(GlamError::Train(format!("non-finite gradient for {}", p.name)));
            }
        }
        self.step += 1;
        let beta = T::of(self.config.beta2(self.step));
        let keep = T::one() - beta;
        let eps1 = T::of(self.config.eps1);
        let d = T::of(self.config.clip_threshold);
        let lr = T::of(lr);

        for ((p, g), moment) in params.iter_mut().zip(grads).zip(&mut self.moments) {
            let g = g.data();
            let mut u: Vec<T> = match moment {
                Moment::Factored { rows, cols } => {
                    let c = cols.len();
                    let mut row_sum = vec![T::zero(); rows.len()];
                    let mut col_sum = vec![T::zero(); c];
                    for (i, rs) in row_sum.iter_mut().enumerate() {
                        for (j, cs) in col_sum.iter_mut().enumerate() {
                            let sq = g[i * c + j] * g[i * c + j] + eps1;
                            *rs += sq;
                            *cs += sq;
                        }
                    }
                    for (r, s) in rows.iter_mut().zip(&row_sum) {
                        *r = beta * *r + keep * *s;
                    }
                    for (col, s) in cols.iter_mut().zip(&col_sum) {
                        *col = beta * *col + keep * *s;
                    }
                    let total: T = rows.iter().copied().sum();
                    (0..g.len()).map(|k| g[k] / (rows[k / c] * cols[k % c] / total).sqrt()).collect()
                }
                Moment::Full(v) => v
                    .iter_mut()
                    .zip(g)
                    .map(|(v, &gi)| {
                        *v = beta * *v + keep * (gi * gi + eps1);
                        gi / v.sqrt()
                    })
                    .collect(),
            };
            let rms = (u.iter().map(|&x| x * x).sum::<T>() / T::of(u.len().max(1) as f64)).sqrt();
            let scale = T::one() / (rms / d).max(T::one());
            for (x, ui) in p.value.data_mut().iter_mut().zip(&mut u) {
                *x -= lr * scale * *ui;
            }
        }
        Ok(())
    }

    pub fn snapshot(&self) -> OptimizerSnapshot {
        let mut named = Vec::new();
        for (name, m) in self.names.iter().zip(&self.moments) {
            match m {
                Moment::Factored { rows, cols } => {
                    named.push((format!("{name}.v_row"), Tensor::new(&[rows.len()], rows.clone()).expect("1-d")));
                    named.push((format!("{name}.v_col"), Tensor::new(&[cols.len()], cols.clone()).expect("1-d")));
                }
                Moment::Full(v) => named.push((format!("{name}.v"), Tensor::new(&[v.len()], v.clone()).expect("1-d"))),
            }
        }
        OptimizerSnapshot { step: self.step, tensors: to_f64_tensors(named) }
    }

    pub fn restore(&mut self, snapshot: &OptimizerSnapshot) -> Result<()> {
        let mut it = snapshot.tensors.iter();
        let mut next = |expect: String, len: usize| -> Result<Vec<T>> {
            match it.next() {
                Some((n, t)) if *n == expect && t.len() == len => Ok(t.data().iter().map(|&x| T::of(x)).collect()),
                other => Err(GlamError::Checkpoint(format!(
                    "optimizer state: expected {expect} of length {len}, found {:?}",
                    other.map(|(n, t)| (n, t.len()))
                ))),
            }
        };
        let mut restored = Vec::with_capacity(self.moments.len());
        for (name, m) in self.names.iter().zip(&self.moments) {
            restored.push(match m {
                Moment::Factored { rows, cols } => Moment::Factored {
                    rows: next(format!("{name}.v_row"), rows.len())?,
                    cols: next(format!("{name}.v_col"), cols.len())?,
                },
                Moment::Full(v) => Moment::Full(next(format!("{name}.v"), v.len())?),
            });
        }
        if snapshot.tensors.len()
            != restored.iter().map(|m| if matches!(m, Moment::Full(_)) { 1 } else { 2 }).sum::<usize>()
        {
            return Err(GlamError::Checkpoint("optimizer state has extra tensors".into()));
        }
        self.moments = restored;
        self.step = snapshot.step;
        Ok(())
    }

    pub fn checksum(&self) -> u64 {
        let named: NamedTensors = self.snapshot().tensors;
        named.iter().fold(self.step, |h, (_, t)| (h.rotate_left(7) ^ t.checksum()).wrapping_mul(0x100_0000_01b3))
    }

    pub fn accumulators_nonnegative(&self) -> bool {
        self.moments.iter().all(|m| match m {
            Moment::Factored { rows, cols } => rows.iter().chain(cols).all(|&x| x >= T::zero()),
            Moment::Full(v) => v.iter().all(|&x| x >= T::zero()),
        })
    }
}
