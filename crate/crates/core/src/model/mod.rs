//! Decoder-only stack with alternating dense and MoE feed-forward layers.

mod attention;
mod checkpoint;
mod config;
mod counting;
mod ffn;
mod glam;

pub use attention::{attention_with_relative_bias, bucket_table, relative_bucket, RelativePositionBias};
pub use checkpoint::{from_f64_tensors, to_f64_tensors, Checkpoint, NamedTensors, OptimizerSnapshot};
pub use config::ModelConfig;
pub use counting::{count_params, flops_for_activated, flops_per_token, ParamBreakdown, ParamCount};
pub use ffn::{geglu_ffn, geglu_on_tape};
pub use glam::{ForwardOutput, GlamModel, Param, TokenBatch, NORM_EPS};
