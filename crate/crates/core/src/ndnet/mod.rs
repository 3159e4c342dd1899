//! Dense tensors, tape-based reverse-mode differentiation, MLPs and Adam.

mod adam;
pub mod checkpoint;
mod graph;
mod mlp;
mod tensor;

pub use adam::AdamState;
pub use graph::{CustomOp, Gradients, Graph, NodeId};
pub use mlp::{Activation, Head, Mlp, MlpNodes};
pub use tensor::Tensor;

pub(crate) use graph::avg_pool_forward;
