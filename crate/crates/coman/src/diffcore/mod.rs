//! Minimal dense-tensor reverse-mode differentiation engine.
//!
//! Single-threaded training contract: one graph is owned by one thread;
//! tensors are immutable values and safe to share read-only.

mod graph;
mod optim;
mod tensor;

pub use graph::{BackwardInfo, Graph, KindSpec, NodeId};
pub use optim::{Adagrad, Dropout, ParamId, ParamStore};
pub use tensor::Tensor;
