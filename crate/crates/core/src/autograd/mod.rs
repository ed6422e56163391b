//! Dense tensors with tape-based reverse-mode differentiation.

mod gradcheck;
mod graph;
mod kernels;
mod tensor;

pub use gradcheck::{central_difference_error, grad_check, relative_error};
pub use graph::{Binary, Graph, Reduce, Unary, Var};
pub use tensor::Tensor;
