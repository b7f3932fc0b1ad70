//! Closed-form parameter and FLOP accounting.
//!
//! Conventions: the embedding table (tied with the output projection) is
//! reported separately and excluded from the totals; attention is
//! `4·M·n_heads·d_head` per layer; dense feed-forward is the gated form with
//! `3·M·H`; each expert is `2·M·H'` with `H'` the expert width; the gate is `M·E`. Relative-bias tables
//! and norm gains are included. A token activates two experts (one when E=1).

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBreakdown {
    pub attention: u64,
    pub dense_ffn: u64,
    pub expert_ffn: u64,
    pub gate: u64,
    pub rel_bias: u64,
    pub norm: u64,
}

impl ParamBreakdown {
    pub fn total(&self) -> u64 {
        self.attention + self.dense_ffn + self.expert_ffn + self.gate + self.rel_bias + self.norm
    }

    /// Feed-forward parameters of both kinds, excluding the gate.
    pub fn ffn(&self) -> u64 {
        self.dense_ffn + self.expert_ffn
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub n_params: u64,
    pub n_act_params: u64,
    pub embedding: u64,
    pub total: ParamBreakdown,
    pub activated: ParamBreakdown,
}

pub fn count_params(config: &ModelConfig) -> ParamCount {
    let (m, h) = (config.d_model as u64, config.d_ff as u64);
    let eh = config.expert_width() as u64;
    let e = config.experts as u64;
    let layers = config.layers as u64;
    let moe_layers = config.moe_layers() as u64;
    let dense_layers = layers - moe_layers;

    let shared = ParamBreakdown {
        attention: layers * 4 * m * config.attention_width() as u64,
        dense_ffn: dense_layers * 3 * m * h,
        expert_ffn: 0,
        gate: moe_layers * m * e,
        rel_bias: layers * (config.n_heads * config.rel_buckets) as u64,
        norm: (2 * layers + 1) * m,
    };
    let total = ParamBreakdown { expert_ffn: moe_layers * e * 2 * m * eh, ..shared.clone() };
    let activated = ParamBreakdown { expert_ffn: moe_layers * e.min(2) * 2 * m * eh, ..shared };
    ParamCount {
        n_params: total.total(),
        n_act_params: activated.total(),
        embedding: config.vocab as u64 * m,
        total,
        activated,
    }
}

/// GFLOPs per token under the two-FLOPs-per-activated-parameter convention.
pub fn flops_per_token(config: &ModelConfig) -> f64 {
    flops_for_activated(count_params(config).n_act_params as f64)
}

pub fn flops_for_activated(n_act_params: f64) -> f64 {
    2.0 * n_act_params / 1e9
}
