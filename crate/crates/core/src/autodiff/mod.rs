//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.

mod gradcheck;
mod sgd;
mod tape;
mod tensor;

pub use gradcheck::finite_diff_check;
pub use sgd::{ParamStore, SgdConfig, SgdState};
pub use tape::{Gradients, Guard, Indices, Tape, Var};
pub use tensor::Tensor2;
