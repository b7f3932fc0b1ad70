use serde::{Deserialize, Serialize};

use crate::error::{GlamError, Result};
use crate::moe::DEFAULT_CAPACITY_FACTOR;

/// Architecture hyperparameters of a decoder stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Transformer layers (L).
    pub layers: usize,
    /// Model and embedding width (M).
    pub d_model: usize,
    /// Feed-forward hidden width (H).
    pub d_ff: usize,
    pub n_heads: usize,
    pub d_head: usize,
    /// Experts per MoE layer (E). With 1 the stack is fully dense unless
    /// `single_expert_moe` is set.
    pub experts: usize,
    pub vocab: usize,
    /// Maximum sequence length (S).
    pub seq_len: usize,
    /// Sequences per batch (B).
    pub batch: usize,
    #[serde(default = "default_capacity_factor")]
    pub capacity_factor: f64,
    #[serde(default = "default_rel_buckets")]
    pub rel_buckets: usize,
    #[serde(default = "default_rel_max_distance")]
    pub rel_max_distance: usize,
    /// Keep MoE layers (plain two-matrix experts with a gate) even when
    /// `experts == 1`, i.e. the "nE = 1" member of an expert-count sweep.
    #[serde(default)]
    pub single_expert_moe: bool,
    /// Hidden width of each expert; `d_ff` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expert_d_ff: Option<usize>,
}

fn default_capacity_factor() -> f64 {
    DEFAULT_CAPACITY_FACTOR
}

fn default_rel_buckets() -> usize {
    32
}

fn default_rel_max_distance() -> usize {
    128
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("layers", self.layers),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("expert_d_ff", self.expert_width()),
            ("n_heads", self.n_heads),
            ("d_head", self.d_head),
            ("experts", self.experts),
            ("vocab", self.vocab),
            ("seq_len", self.seq_len),
            ("batch", self.batch),
            ("rel_buckets", self.rel_buckets),
            ("rel_max_distance", self.rel_max_distance),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(GlamError::config(format!("{name} must be positive")));
        }
        if self.has_moe() && self.layers % 2 != 0 {
            return Err(GlamError::config(format!(
                "MoE on every other layer needs an even layer count, got {}",
                self.layers
            )));
        }
        if !(self.capacity_factor >= 1.0) {
            return Err(GlamError::config(format!("capacity_factor must be >= 1, got {}", self.capacity_factor)));
        }
        Ok(())
    }

    pub fn has_moe(&self) -> bool {
        self.experts > 1 || self.single_expert_moe
    }

    /// Odd-indexed layers carry the MoE feed-forward.
    pub fn is_moe_layer(&self, layer: usize) -> bool {
        self.has_moe() && layer % 2 == 1
    }

    pub fn moe_layers(&self) -> usize {
        (0..self.layers).filter(|&l| self.is_moe_layer(l)).count()
    }

    pub fn expert_width(&self) -> usize {
        self.expert_d_ff.unwrap_or(self.d_ff)
    }

    pub fn attention_width(&self) -> usize {
        self.n_heads * self.d_head
    }

    pub fn with_experts(&self, experts: usize) -> Self {
        Self { experts, ..self.clone() }
    }

    /// A row of the published model-size grid, by its name ("0.1B",
    /// "1.7B/64E", "64B/64E", ...).
    pub fn preset(name: &str) -> Option<Self> {
        let (base, experts) = match name.split_once('/') {
            Some((b, e)) => (b, e.strip_suffix('E')?.parse().ok()?),
            None => (name, 1),
        };
        let (layers, d_model, d_ff, n_heads, d_head) = match (base, experts) {
            ("0.1B", _) => (12, 768, 3072, 12, 64),
            ("1.7B", _) => (24, 2048, 8192, 16, 128),
            ("8B", _) => (32, 4096, 16384, 32, 128),
            ("137B", 1) => (64, 8192, 65536, 128, 128),
            ("64B", _) => (64, 8192, 32768, 128, 128),
            _ => return None,
        };
        Some(Self {
            layers,
            d_model,
            d_ff,
            n_heads,
            d_head,
            experts,
            vocab: 256_000,
            seq_len: 1024,
            batch: 1024,
            capacity_factor: DEFAULT_CAPACITY_FACTOR,
            rel_buckets: default_rel_buckets(),
            rel_max_distance: default_rel_max_distance(),
            single_expert_moe: false,
            expert_d_ff: None,
        })
    }

    /// Names accepted by [`ModelConfig::preset`], in table order.
    pub const PRESETS: [&'static str; 11] = [
        "0.1B",
        "0.1B/64E",
        "1.7B",
        "1.7B/32E",
        "1.7B/64E",
        "1.7B/128E",
        "1.7B/256E",
        "8B",
        "8B/64E",
        "137B",
        "64B/64E",
    ];

    /// Small stack suited to CPU training runs.
    pub fn toy(experts: usize) -> Self {
        Self {
            layers: 2,
            d_model: 16,
            d_ff: 32,
            n_heads: 2,
            d_head: 8,
            experts,
            vocab: 32,
            seq_len: 16,
            batch: 8,
            capacity_factor: DEFAULT_CAPACITY_FACTOR,
            rel_buckets: 8,
            rel_max_distance: 16,
            single_expert_moe: false,
            expert_d_ff: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse() {
        for name in ModelConfig::PRESETS {
            let c = ModelConfig::preset(name).unwrap();
            c.validate().unwrap();
        }
        let c = ModelConfig::preset("0.1B/64E").unwrap();
        assert_eq!((c.layers, c.d_model, c.d_ff, c.experts), (12, 768, 3072, 64));
        assert_eq!(c.moe_layers(), 6);
        assert!(ModelConfig::preset("137B/64E").is_none());
        assert!(ModelConfig::preset("nonsense").is_none());
    }

    #[test]
    fn odd_layers_with_experts_rejected() {
        let mut c = ModelConfig::toy(4);
        c.layers = 3;
        assert!(c.validate().is_err());
        c.experts = 1;
        assert!(c.validate().is_ok());
        c.single_expert_moe = true;
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_dimension_rejected() {
        let mut c = ModelConfig::toy(2);
        c.d_head = 0;
        assert!(c.validate().unwrap_err().to_string().contains("d_head"));
    }
}
