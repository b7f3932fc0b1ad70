//! Desk-scale sparsely activated mixture-of-experts decoder language model.
//!
//! The math is generic over [`Scalar`] (`f32`/`f64`); the `*64` aliases at the
//! crate root are what training and tests use.

pub mod contamination;
pub mod cost;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod moe;
pub mod numerics;
pub mod rng;
pub mod scalar;
pub mod shardplan;
pub mod trainer;

pub use error::{GlamError, Result};
pub use scalar::Scalar;

pub type Tensor64 = numerics::Tensor<f64>;
pub type Tensor32 = numerics::Tensor<f32>;
pub type Tape64 = numerics::Tape<f64>;
pub type GlamModel64 = model::GlamModel<f64>;
pub type GlamModel32 = model::GlamModel<f32>;
