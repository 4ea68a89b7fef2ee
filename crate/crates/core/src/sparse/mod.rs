//! Sparse matrix storage and a pivoting LU factorization for the KKT systems.
//!
//! The KKT matrices assembled by the estimator are symmetric indefinite with a
//! zero dual block. They are factorized with a left-looking (Gilbert-Peierls)
//! LU using threshold partial pivoting that prefers the diagonal, after a
//! symmetric minimum-degree ordering of the structure of `A + A^T`.

mod csc;
mod lu;
mod ordering;

pub use csc::{CscMatrix, Triplets};
pub use lu::{LuFactors, SingularPivot};
pub use ordering::minimum_degree;
