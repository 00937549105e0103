//! Dense tensors and a tape-based reverse-mode differentiation engine.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_many, GradCheckReport, REL_FLOOR};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
