//! Dense linear algebra: the matrix type, SVD, Cholesky, low-rank factors
//! and rank budgets.

mod budget;
mod cholesky;
mod factors;
mod matrix;
mod svd;

pub use budget::{rank_budget, RankBudget};
pub use cholesky::{cholesky_lower, lower_triangular_inverse};
pub use factors::{truncate, FactorPair};
pub use matrix::{frobenius_error, DenseMatrix};
pub use svd::{svd, svd_labeled, SvdFactors};
