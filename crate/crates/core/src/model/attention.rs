//! Causal self-attention with a learned per-layer relative position bias.
//!
//! The bias is a `[heads × buckets]` table per layer, indexed by a
//! log-spaced bucket of the causal distance `i − j`: distances below
//! `buckets / 2` get their own bucket, larger ones share logarithmically
//! wider buckets up to `max_distance`.

use crate::error::{GlamError, Result};
use crate::numerics::{attention_forward, AttentionGeometry, Tensor};
use crate::scalar::Scalar;

pub fn relative_bucket(distance: usize, buckets: usize, max_distance: usize) -> usize {
    let exact = (buckets / 2).max(1);
    if distance < exact {
        return distance.min(buckets - 1);
    }
    if max_distance <= exact {
        return buckets - 1;
    }
    let span = (buckets - exact) as f64;
    let scaled = ((distance as f64 / exact as f64).ln() / (max_distance as f64 / exact as f64).ln() * span) as usize;
    (exact + scaled).min(buckets - 1)
}

pub fn bucket_table(seq: usize, buckets: usize, max_distance: usize) -> Vec<usize> {
    (0..seq).map(|d| relative_bucket(d, buckets, max_distance)).collect()
}

/// Per-layer relative bias tables.
#[derive(Clone, Debug, PartialEq)]
pub struct RelativePositionBias<T> {
    /// One `[heads × buckets]` table per layer.
    pub tables: Vec<Tensor<T>>,
    pub max_distance: usize,
}

impl<T: Scalar> RelativePositionBias<T> {
    pub fn zeros(layers: usize, heads: usize, buckets: usize, max_distance: usize) -> Self {
        Self { tables: vec![Tensor::zeros(&[heads, buckets]); layers], max_distance }
    }

    /// Bias added to the logit of query `i` attending to key `j ≤ i`.
    pub fn bias(&self, layer: usize, head: usize, i: usize, j: usize) -> T {
        let t = &self.tables[layer];
        let buckets = t.shape()[1];
        t.get2(head, relative_bucket(i - j, buckets, self.max_distance))
    }
}

/// Attention for one sequence with `q`, `k`, `v` shaped `[heads × S × d_head]`.
pub fn attention_with_relative_bias<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    rel: &RelativePositionBias<T>,
    layer: usize,
) -> Result<Tensor<T>> {
    let &[heads, seq, d_head] = q.shape() else {
        return Err(GlamError::Shape { op: "attention", lhs: q.shape().to_vec(), rhs: vec![0, 0, 0] });
    };
    for t in [k, v] {
        if t.shape() != q.shape() {
            return Err(GlamError::Shape { op: "attention", lhs: q.shape().to_vec(), rhs: t.shape().to_vec() });
        }
    }
    let table =
        rel.tables.get(layer).ok_or(GlamError::Range { what: "layer", value: layer, limit: rel.tables.len() })?;
    if table.shape()[0] != heads {
        return Err(GlamError::Shape { op: "attention bias", lhs: table.shape().to_vec(), rhs: vec![heads] });
    }
    let buckets = table.shape()[1];
    let geom = AttentionGeometry {
        batch: 1,
        seq,
        heads,
        d_head,
        bucket_of_distance: bucket_table(seq, buckets, rel.max_distance),
        buckets,
    };
    // [heads × S × d] -> [S × heads·d]
    let interleave = |t: &Tensor<T>| {
        let mut out = vec![T::zero(); t.len()];
        for h in 0..heads {
            for s in 0..seq {
                for d in 0..d_head {
                    out[s * heads * d_head + h * d_head + d] = t.data()[(h * seq + s) * d_head + d];
                }
            }
        }
        out
    };
    let (out, _) = attention_forward(&interleave(q), &interleave(k), &interleave(v), table.data(), &geom);
    let mut back = vec![T::zero(); out.len()];
    for h in 0..heads {
        for s in 0..seq {
            for d in 0..d_head {
                back[(h * seq + s) * d_head + d] = out[s * heads * d_head + h * d_head + d];
            }
        }
    }
    Tensor::new(q.shape(), back)
}
