//! Multi-output GP regression with separable covariance
//! `cov(Y) = (K(X, X) + I) ⊗ Σ_ε`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Var};
use crate::blr::BlrPrior;
use crate::error::{Error, Result};
use crate::kernels::{KernelSpec, MeanKind, MeanSpec};
use crate::numerics::{chol, solve_lower_triangular, KroneckerGaussian, Matrix};

/// Parameter holding `ln diag(Σ_ε)` as a 1 x n_y row.
pub const NOISE_PARAM: &str = "noise.log_var";

/// Diagonal `Σ_ε` from the log-variance parameter.
pub fn noise_covariance(params: &ParamStore) -> Result<Matrix> {
    let lv = params
        .get(NOISE_PARAM)
        .ok_or_else(|| Error::UnknownParameter(NOISE_PARAM.into()))?;
    Ok(Matrix::from_diag(&lv.map(f64::exp).into_vec()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GprModel {
    pub kernel: KernelSpec,
    pub mean: MeanSpec,
    #[serde(skip)]
    pub params: ParamStore,
}

impl GprModel {
    /// Builds the model and initializes every parameter; `Σ_ε` starts at
    /// `init_noise_var · I`.
    pub fn new(kernel: KernelSpec, mean: MeanSpec, init_noise_var: f64, rng: &mut impl Rng) -> Result<Self> {
        kernel.validate()?;
        mean.validate(&kernel)?;
        if !(init_noise_var > 0.0 && init_noise_var.is_finite()) {
            return Err(Error::InvalidConfig(format!("initial noise variance {init_noise_var}")));
        }
        let mut params = ParamStore::new();
        kernel.init_params(&mut params, rng)?;
        mean.init_params(&kernel, &mut params, rng)?;
        params.insert(NOISE_PARAM, Matrix::filled(1, mean.output_dim, init_noise_var.ln()))?;
        Ok(Self { kernel, mean, params })
    }

    pub fn n_outputs(&self) -> usize {
        self.mean.output_dim
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.kernel
            .feature_net
            .as_ref()
            .or(self.mean.feature_net.as_ref())
            .map(|n| n.input_dim)
    }

    pub fn sigma_eps(&self) -> Result<Matrix> {
        noise_covariance(&self.params)
    }

    /// Mean (n x n_y) and gram (n x n) nodes, sharing the kernel features with a
    /// shared-head mean.
    pub fn prior_nodes(&self, g: &mut Graph, params: &ParamStore, x: Var) -> Result<(Var, Var)> {
        if g.shape(x).0 == 0 {
            return Err(Error::dims("GPR prior over an empty input set"));
        }
        let u = self.kernel.representation(g, params, x)?;
        let gram = self.kernel.gram_from_repr(g, params, u)?;
        let feats = (self.mean.kind == MeanKind::SharedHead).then_some(u);
        let mean = self.mean.eval(g, params, x, feats)?;
        Ok((mean, gram))
    }

    fn prior_values(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let (m, k) = self.prior_nodes(&mut g, &self.params, xv)?;
        Ok((g.value(m).clone(), g.value(k).clone()))
    }

    /// `MN(m(X), K(X, X) + I, Σ_ε)`.
    pub fn joint_prior(&self, x: &Matrix) -> Result<KroneckerGaussian> {
        let (mean, gram) = self.prior_values(x)?;
        KroneckerGaussian::new(mean, gram.add_diag(1.0), self.sigma_eps()?)
    }

    pub fn posterior_predict(&self, x_c: &Matrix, y_c: &Matrix, x_t: &Matrix) -> Result<KroneckerGaussian> {
        if x_c.rows() != y_c.rows() || (x_c.rows() > 0 && x_c.cols() != x_t.cols()) {
            return Err(Error::dims(format!(
                "context X {:?}, Y {:?}, test X {:?}",
                x_c.shape(),
                y_c.shape(),
                x_t.shape()
            )));
        }
        if x_c.rows() == 0 {
            return self.joint_prior(x_t);
        }
        let (mean, gram) = self.prior_values(&x_c.vstack(x_t))?;
        condition_rows(&mean, &gram.add_diag(1.0), y_c, &self.sigma_eps()?)
    }
}

/// Conditions `MN(mean, row_cov, col_cov)` over context-then-test rows on the
/// first `y_c.rows()` rows. Only the row factor is touched.
pub fn condition_rows(mean: &Matrix, row_cov: &Matrix, y_c: &Matrix, col_cov: &Matrix) -> Result<KroneckerGaussian> {
    let (n, n_y) = mean.shape();
    let n_c = y_c.rows();
    if row_cov.shape() != (n, n) || y_c.cols() != n_y || n_c > n {
        return Err(Error::dims(format!(
            "conditioning mean {:?}, row cov {:?}, observed {:?}",
            mean.shape(),
            row_cov.shape(),
            y_c.shape()
        )));
    }
    let mean_t = mean.slice_rows(n_c, n);
    let r22 = row_cov.block(n_c, n, n_c, n);
    if n_c == 0 {
        return KroneckerGaussian::new(mean_t, r22, col_cov.clone());
    }
    let f = chol(&row_cov.block(0, n_c, 0, n_c))?;
    let w = f.solve_lower(&row_cov.block(0, n_c, n_c, n));
    let z = f.solve_lower(&y_c.sub(&mean.slice_rows(0, n_c)));
    let mean_t = mean_t.add(&w.t_matmul(&z));
    let cov_t = r22.sub(&w.t_matmul(&w)).symmetrize();
    KroneckerGaussian::new(mean_t, cov_t, col_cov.clone())
}

/// GP predictive with mean `φ(x)ᵀK₀` and kernel `φ(x)ᵀΛ₀⁻¹φ(x')`, the function
/// space view of the BLR prior. Takes precomputed feature rows.
pub fn posterior_predict_linear(
    prior: &BlrPrior,
    phi_c: &Matrix,
    y_c: &Matrix,
    phi_t: &Matrix,
) -> Result<KroneckerGaussian> {
    let n_phi = prior.n_features();
    if phi_c.cols() != n_phi || phi_t.cols() != n_phi || phi_c.rows() != y_c.rows() {
        return Err(Error::dims(format!(
            "features {:?} / {:?} for n_φ={n_phi}",
            phi_c.shape(),
            phi_t.shape()
        )));
    }
    let phi = phi_c.vstack(phi_t);
    // Λ₀⁻¹ = L⁻ᵀL⁻¹, so the gram is ΨᵀΨ with Ψ = L⁻¹Φᵀ.
    let psi = solve_lower_triangular(&prior.lambda0_chol, &phi.transpose());
    let gram = psi.t_matmul(&psi);
    let mean = phi.matmul(&prior.k0);
    condition_rows(&mean, &gram.add_diag(1.0), y_c, &prior.sigma_eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::FeatureNetSpec;
    use crate::blr::{posterior_update, predict, tests::random_prior};
    use crate::kernels::KernelKind;
    use crate::numerics::{chol_psd, gaussian_condition, max_rel_err};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(r: usize, c: usize, rng: &mut impl Rng) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-2.0..2.0))
    }

    fn linear_identity_model() -> GprModel {
        let net = FeatureNetSpec::new("kernel_net", 1, vec![], 1);
        let kernel = KernelSpec::new(KernelKind::DeepLinear, Some(net)).unwrap();
        let mut m = GprModel::new(kernel, MeanSpec::zero(1), 1.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        m.params.set("kernel_net.w0", Matrix::scalar(1.0)).unwrap();
        m
    }

    fn model_of_kind(kind: KernelKind, n_x: usize, n_y: usize, seed: u64) -> GprModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (kernel, mean) = match kind {
            KernelKind::SeRaw => (
                KernelSpec::new(kind, None).unwrap(),
                MeanSpec::independent(FeatureNetSpec::new("mean_net", n_x, vec![5], n_y)),
            ),
            KernelKind::DeepSe => (
                KernelSpec::new(kind, Some(FeatureNetSpec::new("kernel_net", n_x, vec![5], 3))).unwrap(),
                MeanSpec::independent(FeatureNetSpec::new("mean_net", n_x, vec![5], n_y)),
            ),
            KernelKind::DeepLinear => (
                KernelSpec::new(kind, Some(FeatureNetSpec::new("kernel_net", n_x, vec![5], 3))).unwrap(),
                MeanSpec::shared_head(n_y),
            ),
        };
        let mut m = GprModel::new(kernel, mean, 1.0, &mut rng).unwrap();
        let noise = Matrix::from_fn(1, n_y, |_, _| rng.random_range(-1.0..1.0));
        m.params.set(NOISE_PARAM, noise).unwrap();
        if m.params.contains("mean.k0") {
            let k0 = random(3, n_y, &mut rng);
            m.params.set("mean.k0", k0).unwrap();
        }
        if m.params.contains("kernel.log_lengthscale") {
            m.params
                .set("kernel.log_lengthscale", Matrix::scalar(rng.random_range(-0.5..0.5)))
                .unwrap();
            m.params
                .set("kernel.log_outputscale", Matrix::scalar(rng.random_range(-0.5..0.5)))
                .unwrap();
        }
        m
    }

    #[test]
    fn joint_prior_examples() {
        let m = linear_identity_model();
        let jp = m.joint_prior(&Matrix::column(&[1.0, 2.0])).unwrap();
        assert_eq!(jp.row_cov, Matrix::from_rows(&[vec![2.0, 2.0], vec![2.0, 5.0]]));
        assert_eq!(jp.mean, Matrix::zeros(2, 1));
        assert_eq!(jp.col_cov, Matrix::identity(1));

        let se = GprModel::new(
            KernelSpec::new(KernelKind::SeRaw, None).unwrap(),
            MeanSpec::zero(1),
            1.0,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(se.joint_prior(&Matrix::scalar(0.7)).unwrap().row_cov.item(), 2.0);
    }

    #[test]
    fn scalar_linear_posterior() {
        let m = linear_identity_model();
        let p = m
            .posterior_predict(&Matrix::scalar(1.0), &Matrix::scalar(1.0), &Matrix::scalar(2.0))
            .unwrap();
        assert!((p.mean.item() - 1.0).abs() < 1e-15);
        assert!((p.row_cov.item() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_context_is_joint_prior() {
        let m = model_of_kind(KernelKind::DeepSe, 2, 2, 1);
        let xt = random(3, 2, &mut ChaCha8Rng::seed_from_u64(1));
        let p = m
            .posterior_predict(&Matrix::zeros(0, 2), &Matrix::zeros(0, 2), &xt)
            .unwrap();
        assert_eq!(p, m.joint_prior(&xt).unwrap());
    }

    #[test]
    fn high_signal_duplicate_point_interpolates() {
        let mut m = GprModel::new(
            KernelSpec::new(KernelKind::SeRaw, None).unwrap(),
            MeanSpec::zero(1),
            1e-2,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        m.params
            .set("kernel.log_outputscale", Matrix::scalar(1e4f64.ln()))
            .unwrap();
        let y = 1.3;
        let p = m
            .posterior_predict(&Matrix::scalar(0.4), &Matrix::scalar(y), &Matrix::scalar(0.4))
            .unwrap();
        let sd = p.marginal_var(0, 0).sqrt();
        assert!((p.mean.item() - y).abs() < 2.0 * sd);
    }

    #[test]
    fn matches_dense_oracle_for_all_kinds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for kind in [KernelKind::SeRaw, KernelKind::DeepSe, KernelKind::DeepLinear] {
            for seed in 0..30 {
                let (n_x, n_y) = (rng.random_range(1..3), rng.random_range(1..3));
                let m = model_of_kind(kind, n_x, n_y, seed);
                let (n_c, n_t) = (rng.random_range(0..16), rng.random_range(1..7));
                let xc = random(n_c, n_x, &mut rng);
                let yc = random(n_c, n_y, &mut rng);
                let xt = random(n_t, n_x, &mut rng);
                let p = m.posterior_predict(&xc, &yc, &xt).unwrap();

                let (mean, cov) = m.joint_prior(&xc.vstack(&xt)).unwrap().to_dense();
                let obs: Vec<usize> = (0..n_c * n_y).collect();
                let (om, oc) = gaussian_condition(&mean, &cov, &obs, yc.as_slice()).unwrap();
                assert!(max_rel_err(&p.mean, &Matrix::from_vec(n_t, n_y, om)) <= 1e-9);
                assert!(max_rel_err(&p.row_cov.kron(&p.col_cov), &oc) <= 1e-9);
                chol_psd(&p.row_cov, 1e-6 * p.row_cov.trace() / n_t as f64 * (1.0 + 1e-9)).unwrap();
            }
        }
    }

    #[test]
    fn test_points_are_exchangeable() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for kind in [KernelKind::SeRaw, KernelKind::DeepSe, KernelKind::DeepLinear] {
            let m = model_of_kind(kind, 2, 2, 4);
            let xc = random(5, 2, &mut rng);
            let yc = random(5, 2, &mut rng);
            let xt = random(4, 2, &mut rng);
            let perm = [2, 0, 3, 1];
            let a = m.posterior_predict(&xc, &yc, &xt).unwrap();
            let b = m.posterior_predict(&xc, &yc, &xt.select_rows(&perm)).unwrap();
            assert_eq!(b.mean, a.mean.select_rows(&perm));
            for i in 0..4 {
                for j in 0..4 {
                    assert_eq!(b.row_cov[(i, j)], a.row_cov[(perm[i], perm[j])]);
                }
            }
        }
    }

    #[test]
    fn blr_equals_weighted_linear_gp() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let (n_phi, n_y) = (rng.random_range(1..9), rng.random_range(1..4));
            let (n_c, n_t) = (rng.random_range(0..21), rng.random_range(1..11));
            let prior = random_prior(n_phi, n_y, &mut rng);
            let phi_c = random(n_c, n_phi, &mut rng);
            let y_c = random(n_c, n_y, &mut rng);
            let phi_t = random(n_t, n_phi, &mut rng);
            let a = predict(&posterior_update(&prior, &phi_c, &y_c).unwrap(), &phi_t).unwrap();
            let b = posterior_predict_linear(&prior, &phi_c, &y_c, &phi_t).unwrap();
            assert!(
                max_rel_err(&a.mean, &b.mean) <= 1e-8,
                "{}",
                max_rel_err(&a.mean, &b.mean)
            );
            assert!(max_rel_err(&a.row_cov, &b.row_cov) <= 1e-8);
            assert_eq!(a.col_cov, b.col_cov);
        }
    }

    #[test]
    fn blr_equals_deep_linear_gp_with_shared_net() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for seed in 0..20 {
            let m = model_of_kind(KernelKind::DeepLinear, 2, 2, seed);
            let net = m.kernel.feature_net.as_ref().unwrap();
            let prior = BlrPrior::new(
                m.params.get("mean.k0").unwrap().clone(),
                Matrix::identity(3),
                m.sigma_eps().unwrap(),
            )
            .unwrap();
            let xc = random(6, 2, &mut rng);
            let yc = random(6, 2, &mut rng);
            let xt = random(3, 2, &mut rng);
            let phi_c = net.features(&m.params, &xc).unwrap();
            let phi_t = net.features(&m.params, &xt).unwrap();
            let a = predict(&posterior_update(&prior, &phi_c, &yc).unwrap(), &phi_t).unwrap();
            let b = m.posterior_predict(&xc, &yc, &xt).unwrap();
            assert!(max_rel_err(&a.mean, &b.mean) <= 1e-8);
            assert!(max_rel_err(&a.row_cov, &b.row_cov) <= 1e-8);
            assert!(max_rel_err(&a.col_cov, &b.col_cov) <= 1e-15);
        }
    }
}
