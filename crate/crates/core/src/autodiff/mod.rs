//! Reverse-mode automatic differentiation over dense tensors.

mod graph;
pub(crate) mod kernels;

pub use graph::{softmax_rows, Gradients, Graph, NodeId, PoolMode};
