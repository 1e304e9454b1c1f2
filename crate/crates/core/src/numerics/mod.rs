//! Dense tensors with reverse-mode differentiation.

mod gradcheck;
mod params;
mod real;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_params, GradCheckOptions, GradCheckReport, ParamCheck};
pub use params::{Bound, Param, ParamId, ParamStore};
pub use real::{lit, Real};
pub use tape::{gelu_scalar, Gradients, Tape, Var};
pub use tensor::Tensor;
