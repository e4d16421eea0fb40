//! Dense tensors, reverse-mode differentiation and the Adam optimizer.

mod adam;
pub mod gradcheck;
mod graph;
mod params;
mod sparse;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use graph::{mean_abs_diff, Graph, OpKind, Var};
pub use params::{Bound, Dense, Param, ParamId, ParamStore};
pub use sparse::SparseMatrix;
pub(crate) use tensor::{gemm_acc, sq_dist, MatView};
pub use tensor::{DType, Real, Tensor};
