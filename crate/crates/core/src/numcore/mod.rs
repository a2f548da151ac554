//! Dense `f64` tensors, reverse-mode differentiation and the optimizer.

mod gradcheck;
mod graph;
mod optim;
mod tensor;

pub use gradcheck::gradcheck;
pub use graph::{log_sum_exp, Graph, Var};
pub use optim::SgdMomentum;
pub use tensor::{normalized, Tensor};
pub(crate) use tensor::{dot, norm};
