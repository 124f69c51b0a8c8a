//! Reverse-mode differentiation over batched matrices, with input gradients
//! recorded in-graph so objectives containing `∇f` can be differentiated
//! with respect to parameters.

mod dual;
mod graph;
mod matrix;

pub use dual::{input_gradient, parameter_gradients, Dual, FieldNodes, FieldRecorder, GradReport};
pub use graph::{Adjoints, Graph, NodeId, Precision};
pub use matrix::Matrix;
