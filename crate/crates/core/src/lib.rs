//! Low-rank matrix completion by Riemannian gradient descent and conjugate
//! gradient on the fixed-rank manifold.

pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod init;
pub mod linalg;
pub mod sampling;
pub mod solvers;
pub mod sparse;
pub mod tangent;

pub use error::{Error, Result};
pub use linalg::{LinearOperator, LowRankMatrix};
pub use sampling::{ObservedData, SamplingMode, SamplingSet};
pub use sparse::SparseMatrix;
