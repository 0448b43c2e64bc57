//! Differentiable tensor operations, parameter storage and gradient
//! verification.

mod gradcheck;
mod graph;
pub mod kernels;
mod params;
mod tensor;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, ParamCheck};
pub use graph::{Gradients, Graph, Var};
pub use kernels::ConvGeom;
pub use params::{Bindings, ParamStore};
pub use tensor::Tensor;
