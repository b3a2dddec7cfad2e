//! Dense linear algebra, Gaussian and matrix-normal densities, and the dense
//! Gaussian-conditioning oracle.
//!
//! Vectorization convention: an `n x n_y` target matrix is flattened row-major,
//! so entry `(i, k)` maps to index `i * n_y + k` and the covariance of the
//! flattened vector is `row_cov ⊗ col_cov`.

mod chol;
mod condition;
mod density;
mod lu;
mod matrix;

pub use chol::{chol, chol_psd, CholFactor, JITTER_LADDER, SYMMETRY_TOL};
pub(crate) use chol::{solve_lower_transpose, solve_lower_triangular};
pub use condition::gaussian_condition;
pub use density::{matnorm_logpdf, mvn_logpdf, KroneckerGaussian, LN_2PI};
pub use lu::{condition_number, inverse};
pub use matrix::{max_rel_err, Matrix};
