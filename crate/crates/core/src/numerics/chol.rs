use crate::error::{Error, Result};

use super::Matrix;

/// Relative jitter ladder, multiplied by `mean(diag(m))`.
pub const JITTER_LADDER: [f64; 5] = [0.0, 1e-10, 1e-8, 1e-6, 1e-4];

/// Relative symmetry tolerance accepted by [`chol_psd`].
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Lower Cholesky factor of `m + jitter_used * I`.
#[derive(Clone, Debug, PartialEq)]
pub struct CholFactor {
    lower: Matrix,
    jitter_used: f64,
}

/// Cholesky factorization with a jitter ladder for near-singular inputs.
///
/// Tries `m + j * mean(diag(m)) * I` for each `j` in [`JITTER_LADDER`], skipping
/// steps whose absolute jitter exceeds `max_jitter`.
pub fn chol_psd(m: &Matrix, max_jitter: f64) -> Result<CholFactor> {
    if !m.is_square() {
        return Err(Error::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    let asym = m.asymmetry();
    if asym > SYMMETRY_TOL * m.max_abs().max(f64::MIN_POSITIVE) {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let n = m.rows();
    if n == 0 {
        return Ok(CholFactor {
            lower: Matrix::zeros(0, 0),
            jitter_used: 0.0,
        });
    }
    let mean_diag = m.trace() / n as f64;
    for step in JITTER_LADDER {
        let jitter = step * mean_diag.abs();
        if jitter > max_jitter {
            break;
        }
        if step > 0.0 && jitter == 0.0 {
            continue;
        }
        if let Some(lower) = cholesky_lower(m, jitter) {
            return Ok(CholFactor {
                lower,
                jitter_used: jitter,
            });
        }
    }
    Err(Error::NotPositiveDefinite)
}

/// `chol_psd` with the full ladder available.
pub fn chol(m: &Matrix) -> Result<CholFactor> {
    chol_psd(m, f64::INFINITY)
}

fn cholesky_lower(m: &Matrix, jitter: f64) -> Option<Matrix> {
    let n = m.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)] + jitter;
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d.is_nan() || d <= 0.0 || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

impl CholFactor {
    /// Wraps an existing lower-triangular factor with a strictly positive diagonal.
    pub fn from_lower(lower: Matrix) -> Result<Self> {
        if !lower.is_square() {
            return Err(Error::NotSquare {
                rows: lower.rows(),
                cols: lower.cols(),
            });
        }
        if lower.diag().iter().any(|&d| d.is_nan() || d <= 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Self {
            lower: lower.tril(),
            jitter_used: 0.0,
        })
    }

    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    /// `L L^T`, i.e. the factored matrix including jitter.
    pub fn reconstruct(&self) -> Matrix {
        self.lower.matmul_t(&self.lower)
    }

    /// `ln |L L^T|`.
    pub fn logdet(&self) -> f64 {
        2.0 * self.lower.diag().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Solves `L X = B`.
    pub fn solve_lower(&self, b: &Matrix) -> Matrix {
        solve_lower_triangular(&self.lower, b)
    }

    /// Solves `L^T X = B`.
    pub fn solve_upper(&self, b: &Matrix) -> Matrix {
        solve_lower_transpose(&self.lower, b)
    }

    /// Solves `(L L^T) X = B`.
    pub fn solve(&self, b: &Matrix) -> Matrix {
        self.solve_upper(&self.solve_lower(b))
    }

    pub fn inverse(&self) -> Matrix {
        self.solve(&Matrix::identity(self.dim()))
    }

    /// In-place rank-1 update: afterwards `L L^T` equals the old `L L^T + v v^T`.
    pub fn rank1_update(&mut self, v: &[f64]) {
        let n = self.dim();
        assert_eq!(v.len(), n, "rank1_update length mismatch");
        let mut x = v.to_vec();
        let l = &mut self.lower;
        for k in 0..n {
            let lkk = l[(k, k)];
            let r = lkk.hypot(x[k]);
            let c = r / lkk;
            let s = x[k] / lkk;
            l[(k, k)] = r;
            for i in (k + 1)..n {
                let lik = (l[(i, k)] + s * x[i]) / c;
                x[i] = c * x[i] - s * lik;
                l[(i, k)] = lik;
            }
        }
    }
}

pub(crate) fn solve_lower_triangular(l: &Matrix, b: &Matrix) -> Matrix {
    let n = l.rows();
    assert_eq!(b.rows(), n, "triangular solve shape mismatch");
    let m = b.cols();
    let mut x = b.clone();
    for i in 0..n {
        for k in 0..i {
            let lik = l[(i, k)];
            if lik == 0.0 {
                continue;
            }
            for j in 0..m {
                let xk = x[(k, j)];
                x[(i, j)] -= lik * xk;
            }
        }
        let d = l[(i, i)];
        for j in 0..m {
            x[(i, j)] /= d;
        }
    }
    x
}

pub(crate) fn solve_lower_transpose(l: &Matrix, b: &Matrix) -> Matrix {
    let n = l.rows();
    assert_eq!(b.rows(), n, "triangular solve shape mismatch");
    let m = b.cols();
    let mut x = b.clone();
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let lki = l[(k, i)];
            if lki == 0.0 {
                continue;
            }
            for j in 0..m {
                let xk = x[(k, j)];
                x[(i, j)] -= lki * xk;
            }
        }
        let d = l[(i, i)];
        for j in 0..m {
            x[(i, j)] /= d;
        }
    }
    x
}
