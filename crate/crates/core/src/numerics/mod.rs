//! Dense tensors and tape-based reverse-mode differentiation.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, RELATIVE_FLOOR};
pub use tape::{gelu, AttentionGeometry, Gradients, Tape, Var};
pub use tensor::{numel, Tensor};

pub(crate) use tape::attention_forward;
