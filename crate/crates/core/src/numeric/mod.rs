//! Dense tensors, reverse-mode autodiff, Adam and gradient checking.

mod gradcheck;
mod graph;
mod optim;
mod scalar;
mod tensor;

pub use gradcheck::{finite_diff_check, GradCheckReport, ParamCheck};
pub use graph::{Activation, Gradients, Graph, Var};
pub use optim::{Adam, AdamConfig};
pub use scalar::Scalar;
pub use tensor::{matmul, Tensor};

