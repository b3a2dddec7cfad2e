use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{chol, Matrix};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `ln N(y; mean, cov)` via the Cholesky factor of `cov`.
pub fn mvn_logpdf(y: &[f64], mean: &[f64], cov: &Matrix) -> Result<f64> {
    let n = y.len();
    if mean.len() != n || cov.shape() != (n, n) {
        return Err(Error::dims(format!(
            "mvn_logpdf: y {n}, mean {}, cov {:?}",
            mean.len(),
            cov.shape()
        )));
    }
    let f = chol(cov)?;
    let r = Matrix::column(&y.iter().zip(mean).map(|(a, b)| a - b).collect::<Vec<_>>());
    let z = f.solve_lower(&r);
    let quad: f64 = z.as_slice().iter().map(|v| v * v).sum();
    Ok(-0.5 * (quad + f.logdet() + n as f64 * LN_2PI))
}

/// Matrix-normal log-density of `Y ~ MN(M, row_cov, col_cov)`, i.e. the Gaussian
/// on the row-major vectorization with covariance `row_cov ⊗ col_cov`.
pub fn matnorm_logpdf(y: &Matrix, m: &Matrix, row_cov: &Matrix, col_cov: &Matrix) -> Result<f64> {
    let (n, ny) = y.shape();
    if m.shape() != (n, ny) || row_cov.shape() != (n, n) || col_cov.shape() != (ny, ny) {
        return Err(Error::dims(format!(
            "matnorm_logpdf: Y {:?}, M {:?}, row {:?}, col {:?}",
            y.shape(),
            m.shape(),
            row_cov.shape(),
            col_cov.shape()
        )));
    }
    let rf = chol(row_cov)?;
    let cf = chol(col_cov)?;
    // tr(C^-1 E^T R^-1 E) = || L_R^-1 E L_C^-T ||_F^2
    let e = y.sub(m);
    let a = rf.solve_lower(&e);
    let b = cf.solve_lower(&a.transpose());
    let quad: f64 = b.as_slice().iter().map(|v| v * v).sum();
    Ok(-0.5 * (ny as f64 * rf.logdet() + n as f64 * cf.logdet() + quad + (n * ny) as f64 * LN_2PI))
}

/// Gaussian over an `n x n_y` matrix with Kronecker covariance `row_cov ⊗ col_cov`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KroneckerGaussian {
    pub mean: Matrix,
    pub row_cov: Matrix,
    pub col_cov: Matrix,
}

impl KroneckerGaussian {
    pub fn new(mean: Matrix, row_cov: Matrix, col_cov: Matrix) -> Result<Self> {
        let (n, ny) = mean.shape();
        if row_cov.shape() != (n, n) || col_cov.shape() != (ny, ny) {
            return Err(Error::dims(format!(
                "KroneckerGaussian: mean {:?}, row {:?}, col {:?}",
                mean.shape(),
                row_cov.shape(),
                col_cov.shape()
            )));
        }
        Ok(Self { mean, row_cov, col_cov })
    }

    pub fn n_rows(&self) -> usize {
        self.mean.rows()
    }

    pub fn n_outputs(&self) -> usize {
        self.mean.cols()
    }

    pub fn logpdf(&self, y: &Matrix) -> Result<f64> {
        matnorm_logpdf(y, &self.mean, &self.row_cov, &self.col_cov)
    }

    /// Marginal variance of entry `(i, k)`.
    pub fn marginal_var(&self, i: usize, k: usize) -> f64 {
        self.row_cov[(i, i)] * self.col_cov[(k, k)]
    }

    /// Log-density of row `i` of `y` under its marginal `N(mean_i, row_cov_ii * col_cov)`.
    pub fn row_marginal_logpdf(&self, y: &Matrix, i: usize) -> Result<f64> {
        let cov = self.col_cov.scale(self.row_cov[(i, i)]);
        mvn_logpdf(y.row(i), self.mean.row(i), &cov)
    }

    /// Row-major vectorized mean and dense covariance `row_cov ⊗ col_cov`.
    pub fn to_dense(&self) -> (Vec<f64>, Matrix) {
        (self.mean.as_slice().to_vec(), self.row_cov.kron(&self.col_cov))
    }

    /// One draw `M + L_R Z L_Cᵀ` with `Z` standard normal.
    pub fn sample(&self, rng: &mut impl Rng) -> Result<Matrix> {
        let (n, ny) = self.mean.shape();
        let lr = chol(&self.row_cov)?;
        let lc = chol(&self.col_cov)?;
        let z = Matrix::from_fn(n, ny, |_, _| StandardNormal.sample(rng));
        Ok(self.mean.add(&lr.lower().matmul(&z).matmul_t(lc.lower())))
    }

    /// Restriction to a subset of rows.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let row_cov = Matrix::from_fn(idx.len(), idx.len(), |a, b| self.row_cov[(idx[a], idx[b])]);
        Self {
            mean: self.mean.select_rows(idx),
            row_cov,
            col_cov: self.col_cov.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Dense oracle: explicit inverse and determinant for 1x1 / 2x2 covariances.
    fn dense_2x2_logpdf(y: [f64; 2], cov: [[f64; 2]; 2]) -> f64 {
        let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        let inv = [[cov[1][1] / det, -cov[0][1] / det], [-cov[1][0] / det, cov[0][0] / det]];
        let quad = y[0] * (inv[0][0] * y[0] + inv[0][1] * y[1]) + y[1] * (inv[1][0] * y[0] + inv[1][1] * y[1]);
        -0.5 * (quad + det.ln() + 2.0 * (2.0 * std::f64::consts::PI).ln())
    }

    #[test]
    fn standard_normal_at_mode() {
        let v = mvn_logpdf(&[0.0], &[0.0], &Matrix::identity(1)).unwrap();
        assert!((v + 0.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn hand_example_2d() {
        let cov = Matrix::from_rows(&[vec![2.0, 2.0], vec![2.0, 5.0]]);
        let v = mvn_logpdf(&[1.0, 0.0], &[0.0, 0.0], &cov).unwrap();
        let oracle = dense_2x2_logpdf([1.0, 0.0], [[2.0, 2.0], [2.0, 5.0]]);
        assert!((v - oracle).abs() < 1e-12);
        assert!((v + 3.15042).abs() < 1e-5);
    }

    #[test]
    fn at_mean_is_normalizer_only() {
        let cov = Matrix::from_rows(&[vec![3.0, 1.0], vec![1.0, 2.0]]);
        let v = mvn_logpdf(&[0.3, -1.0], &[0.3, -1.0], &cov).unwrap();
        assert!((v + 0.5 * (5f64.ln() + 2.0 * LN_2PI)).abs() < 1e-12);
    }

    #[test]
    fn matnorm_reduces_to_mvn() {
        let y = Matrix::column(&[1.0, 0.0]);
        let m = Matrix::zeros(2, 1);
        let row = Matrix::from_rows(&[vec![2.0, 2.0], vec![2.0, 5.0]]);
        let v = matnorm_logpdf(&y, &m, &row, &Matrix::identity(1)).unwrap();
        assert!((v + 3.15042).abs() < 1e-5);
        let s = matnorm_logpdf(
            &Matrix::zeros(1, 1),
            &Matrix::zeros(1, 1),
            &Matrix::identity(1),
            &Matrix::identity(1),
        )
        .unwrap();
        assert!((s + 0.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn sample_moments() {
        use rand::SeedableRng;
        let kg = KroneckerGaussian::new(
            Matrix::from_rows(&[vec![1.0, -1.0]]),
            Matrix::scalar(2.0),
            Matrix::from_diag(&[0.5, 3.0]),
        )
        .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let n = 20000;
        let draws: Vec<Matrix> = (0..n).map(|_| kg.sample(&mut rng).unwrap()).collect();
        for (k, (mu, var)) in [(1.0, 1.0), (-1.0, 6.0)].into_iter().enumerate() {
            let m = draws.iter().map(|d| d[(0, k)]).sum::<f64>() / n as f64;
            let v = draws.iter().map(|d| (d[(0, k)] - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((m - mu).abs() < 4.0 * (var / n as f64).sqrt());
            assert!((v - var).abs() < 4.0 * var * (2.0 / n as f64).sqrt());
        }
    }

    #[test]
    fn dimension_mismatch() {
        let err = matnorm_logpdf(
            &Matrix::zeros(2, 1),
            &Matrix::zeros(2, 2),
            &Matrix::identity(2),
            &Matrix::identity(1),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }
}
