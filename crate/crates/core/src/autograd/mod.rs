//! Dense tensors with reverse-mode automatic differentiation.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{finite_diff_check, finite_diff_check_sampled, GradCheckReport};
pub use graph::{CustomOp, Graph, Var};
pub use tensor::Tensor;
