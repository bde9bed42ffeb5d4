//! Dense tensors, a tape-based reverse-mode autodiff graph and a
//! finite-difference gradient oracle.
//!
//! Values live in [`Tensor`]; differentiable computation is recorded on a
//! [`Graph`] whose nodes are addressed by [`Var`] handles. Precision is the
//! graph's element type: `f32` for training, `f64` for gradient checks.

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
mod ops;
pub mod real;
pub mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{finite_diff_check, FiniteDiffOptions, GradCheckReport, ParamCheck};
pub use graph::{CustomOp, Graph, Var};
pub use kernels::attention::AllocCounter;
pub use kernels::conv::{Conv2dSpec, Padding};
pub use ops::{Activation, Resize};
pub use real::{Precision, Real};
pub use tensor::Tensor;
