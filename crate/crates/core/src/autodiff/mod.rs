//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.

mod adam;
mod graph;
mod tensor;

pub use adam::AdamState;
pub use graph::{Gradients, Graph, Primitive, Var, BCE_EPS};
pub use tensor::Tensor;
