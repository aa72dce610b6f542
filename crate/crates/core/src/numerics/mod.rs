//! Dense tensors, a reverse-mode tape with coarse fused ops, and Adam.

mod adam;
pub mod gradcheck;
mod graph;
pub mod ops;
mod real;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub(crate) use graph::Backward;
pub use graph::{Graph, Var};
pub use ops::{BatchStats, LstmVars};
pub use real::{gemm, MatMut, MatRef, Real};
pub use tensor::Tensor;
