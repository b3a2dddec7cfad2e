//! Bayesian linear regression in feature space with a matrix-normal prior
//! `K ~ MN(K₀, Λ₀⁻¹, Σ_ε)`.
//!
//! Feature matrices hold one sample per row, so the precision update reads
//! `Λ_τ = Φ_cᵀΦ_c + Λ₀` and the posterior mean `K_τ = Λ_τ⁻¹(Φ_cᵀY_c + Λ₀K₀)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{chol, condition_number, inverse, CholFactor, KroneckerGaussian, Matrix};

/// Transforms with a larger 1-norm condition number are rejected.
pub const MAX_TRANSFORM_CONDITION: f64 = 1e8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlrPrior {
    pub k0: Matrix,
    /// Lower Cholesky factor `L` of the prior precision `Λ₀ = LLᵀ`.
    pub lambda0_chol: Matrix,
    /// Diagonal output-noise covariance.
    pub sigma_eps: Matrix,
    pub fixed_lambda0: bool,
}

impl BlrPrior {
    pub fn new(k0: Matrix, lambda0_chol: Matrix, sigma_eps: Matrix) -> Result<Self> {
        let prior = Self {
            k0,
            lambda0_chol,
            sigma_eps,
            fixed_lambda0: false,
        };
        prior.validate()?;
        Ok(prior)
    }

    /// `K₀ = 0`, `Λ₀ = I`, `Σ_ε = I`.
    pub fn standard(n_phi: usize, n_y: usize) -> Self {
        Self {
            k0: Matrix::zeros(n_phi, n_y),
            lambda0_chol: Matrix::identity(n_phi),
            sigma_eps: Matrix::identity(n_y),
            fixed_lambda0: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (n_phi, n_y) = self.k0.shape();
        let l = &self.lambda0_chol;
        if l.shape() != (n_phi, n_phi) || self.sigma_eps.shape() != (n_y, n_y) {
            return Err(Error::dims(format!(
                "prior K0 {:?}, Λ₀ factor {:?}, Σ_ε {:?}",
                self.k0.shape(),
                l.shape(),
                self.sigma_eps.shape()
            )));
        }
        for i in 0..n_phi {
            if l[(i, i)] <= 0.0 || (i + 1..n_phi).any(|j| l[(i, j)] != 0.0) {
                return Err(Error::NotPositiveDefinite);
            }
        }
        validate_noise(&self.sigma_eps)
    }

    pub fn n_features(&self) -> usize {
        self.k0.rows()
    }

    pub fn n_outputs(&self) -> usize {
        self.k0.cols()
    }

    pub fn lambda0(&self) -> Matrix {
        self.lambda0_chol.matmul_t(&self.lambda0_chol)
    }

    /// The posterior after observing nothing.
    pub fn empty_posterior(&self) -> BlrPosterior {
        let l = &self.lambda0_chol;
        BlrPosterior {
            k_tau: self.k0.clone(),
            lambda_tau_chol: CholFactor::from_lower(l.clone()).expect("validated prior factor"),
            sigma_eps: self.sigma_eps.clone(),
            n_context: 0,
            rhs: l.matmul(&l.t_matmul(&self.k0)),
        }
    }
}

pub(crate) fn validate_noise(sigma: &Matrix) -> Result<()> {
    let n = sigma.rows();
    if !sigma.is_square() {
        return Err(Error::NotSquare {
            rows: sigma.rows(),
            cols: sigma.cols(),
        });
    }
    for i in 0..n {
        for j in 0..n {
            let v = sigma[(i, j)];
            if (i == j && !(v > 0.0 && v.is_finite())) || (i != j && v != 0.0) {
                return Err(Error::InvalidArgument("Σ_ε must be diagonal and positive".into()));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlrPosterior {
    pub k_tau: Matrix,
    pub lambda_tau_chol: CholFactor,
    pub sigma_eps: Matrix,
    pub n_context: usize,
    /// `Φ_cᵀY_c + Λ₀K₀`, kept for incremental updates.
    rhs: Matrix,
}

impl BlrPosterior {
    pub fn lambda_tau(&self) -> Matrix {
        self.lambda_tau_chol.reconstruct()
    }
}

pub fn posterior_update(prior: &BlrPrior, phi_c: &Matrix, y_c: &Matrix) -> Result<BlrPosterior> {
    let (n_phi, n_y) = prior.k0.shape();
    if phi_c.cols() != n_phi || y_c.cols() != n_y || phi_c.rows() != y_c.rows() {
        return Err(Error::dims(format!(
            "context Φ {:?}, Y {:?} for prior with n_φ={n_phi}, n_y={n_y}",
            phi_c.shape(),
            y_c.shape()
        )));
    }
    let mut post = prior.empty_posterior();
    if phi_c.rows() == 0 {
        return Ok(post);
    }
    let lambda_tau = phi_c.t_matmul(phi_c).add(&prior.lambda0());
    post.lambda_tau_chol = chol(&lambda_tau.symmetrize())?;
    post.rhs.add_assign(&phi_c.t_matmul(y_c));
    post.k_tau = post.lambda_tau_chol.solve(&post.rhs);
    post.n_context = phi_c.rows();
    Ok(post)
}

/// Adds one observation in `O(n_φ² + n_φ n_y)` beyond the solve.
pub fn rank1_update(post: &BlrPosterior, phi: &[f64], y: &[f64]) -> Result<BlrPosterior> {
    let (n_phi, n_y) = post.k_tau.shape();
    if phi.len() != n_phi || y.len() != n_y {
        return Err(Error::dims(format!(
            "rank-1 update with φ of {} and y of {}, expected {n_phi} and {n_y}",
            phi.len(),
            y.len()
        )));
    }
    let mut next = post.clone();
    next.n_context += 1;
    if phi.iter().all(|&v| v == 0.0) {
        return Ok(next);
    }
    next.lambda_tau_chol.rank1_update(phi);
    for (i, &p) in phi.iter().enumerate() {
        for (r, &yk) in next.rhs.row_mut(i).iter_mut().zip(y) {
            *r += p * yk;
        }
    }
    next.k_tau = next.lambda_tau_chol.solve(&next.rhs);
    Ok(next)
}

/// Predictive `MN(Φ_t K_τ, I + Φ_t Λ_τ⁻¹ Φ_tᵀ, Σ_ε)`.
pub fn predict(post: &BlrPosterior, phi_t: &Matrix) -> Result<KroneckerGaussian> {
    if phi_t.cols() != post.k_tau.rows() || phi_t.rows() == 0 {
        return Err(Error::dims(format!(
            "test features {:?} for n_φ={}",
            phi_t.shape(),
            post.k_tau.rows()
        )));
    }
    let mean = phi_t.matmul(&post.k_tau);
    let w = post.lambda_tau_chol.solve_lower(&phi_t.transpose());
    let row_cov = w.t_matmul(&w).add_diag(1.0).symmetrize();
    KroneckerGaussian::new(mean, row_cov, post.sigma_eps.clone())
}

/// Maps features through `φ'(x) = Lp⁻¹ φ(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTransform {
    lp_inv: Matrix,
}

impl FeatureTransform {
    pub fn lp_inv(&self) -> &Matrix {
        &self.lp_inv
    }

    /// Row-convention application: `Φ' = Φ Lp⁻ᵀ`.
    pub fn apply(&self, phi: &Matrix) -> Result<Matrix> {
        if phi.cols() != self.lp_inv.rows() {
            return Err(Error::dims(format!(
                "features {:?} for a {}-dim transform",
                phi.shape(),
                self.lp_inv.rows()
            )));
        }
        Ok(phi.matmul_t(&self.lp_inv))
    }
}

/// Reparametrizes the prior so that, combined with the returned feature map,
/// every predictive is unchanged: `K₀' = LpᵀK₀`, `Λ₀'⁻¹ = LpᵀΛ₀⁻¹Lp`.
pub fn transform_prior(prior: &BlrPrior, lp: &Matrix) -> Result<(BlrPrior, FeatureTransform)> {
    let n_phi = prior.n_features();
    if lp.shape() != (n_phi, n_phi) {
        return Err(Error::dims(format!("transform {:?} for n_φ={n_phi}", lp.shape())));
    }
    let cond = condition_number(lp);
    if cond.is_nan() || cond >= MAX_TRANSFORM_CONDITION {
        return Err(Error::SingularTransform(cond));
    }
    let lp_inv = inverse(lp)?;
    // Λ₀' = Lp⁻¹ L (Lp⁻¹ L)ᵀ
    let b = lp_inv.matmul(&prior.lambda0_chol);
    let lambda0 = b.matmul_t(&b).symmetrize();
    let transformed = BlrPrior {
        k0: lp.t_matmul(&prior.k0),
        lambda0_chol: chol(&lambda0)?.lower().clone(),
        sigma_eps: prior.sigma_eps.clone(),
        fixed_lambda0: prior.fixed_lambda0,
    };
    Ok((transformed, FeatureTransform { lp_inv }))
}
