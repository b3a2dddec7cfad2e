//! Trainable models and the method table mapping names like `BLR-PR-FC` to a
//! model architecture and a meta-training loss.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Checkpoint, FeatureNetSpec, Graph, ParamStore, Var};
use crate::blr::{self, BlrPrior};
use crate::error::{Error, Result};
use crate::gpr::{noise_covariance, GprModel, NOISE_PARAM};
use crate::kernels::{KernelKind, KernelSpec, MeanSpec};
use crate::numerics::{KroneckerGaussian, Matrix};
use crate::objectives::LossKind;

pub const K0_PARAM: &str = "blr.k0";
/// Raw parameter of `Λ₀`'s Cholesky factor: strict lower part as is, diagonal
/// through `exp`. All zeros gives `Λ₀ = I`.
pub const LAMBDA0_PARAM: &str = "blr.lambda0_raw";

/// Anything that maps a context set and test inputs to a Kronecker predictive.
pub trait Predictor: Sync {
    fn predict(&self, x_c: &Matrix, y_c: &Matrix, x_t: &Matrix) -> Result<KroneckerGaussian>;
}

/// Latent-space BLR: a feature net followed by a conjugate linear layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentBlr {
    pub feature_net: FeatureNetSpec,
    pub n_y: usize,
    #[serde(skip)]
    pub params: ParamStore,
}

impl LatentBlr {
    pub fn new(
        feature_net: FeatureNetSpec,
        n_y: usize,
        fix_lambda0: bool,
        fix_noise: bool,
        init_noise_var: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if n_y == 0 {
            return Err(Error::InvalidConfig("n_y must be positive".into()));
        }
        if !(init_noise_var > 0.0 && init_noise_var.is_finite()) {
            return Err(Error::InvalidConfig(format!("initial noise variance {init_noise_var}")));
        }
        let mut params = ParamStore::new();
        feature_net.init_params(&mut params, rng)?;
        let n_phi = feature_net.output_dim;
        params.insert(K0_PARAM, Matrix::zeros(n_phi, n_y))?;
        params.insert_param(LAMBDA0_PARAM, Matrix::zeros(n_phi, n_phi), fix_lambda0)?;
        params.insert_param(NOISE_PARAM, Matrix::filled(1, n_y, init_noise_var.ln()), fix_noise)?;
        Ok(Self {
            feature_net,
            n_y,
            params,
        })
    }

    pub fn n_features(&self) -> usize {
        self.feature_net.output_dim
    }

    pub fn features(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() == 0 {
            if x.cols() != self.feature_net.input_dim {
                return Err(Error::dims("empty input with the wrong width"));
            }
            return Ok(Matrix::zeros(0, self.n_features()));
        }
        self.feature_net.features(&self.params, x)
    }

    /// Prior in the current parameters.
    pub fn prior(&self) -> Result<BlrPrior> {
        let raw = self
            .params
            .param(LAMBDA0_PARAM)
            .ok_or_else(|| Error::UnknownParameter(LAMBDA0_PARAM.into()))?;
        let l = Matrix::from_fn(raw.value.rows(), raw.value.cols(), |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Greater => raw.value[(i, j)],
            std::cmp::Ordering::Equal => raw.value[(i, j)].exp(),
            std::cmp::Ordering::Less => 0.0,
        });
        let k0 = self
            .params
            .get(K0_PARAM)
            .ok_or_else(|| Error::UnknownParameter(K0_PARAM.into()))?
            .clone();
        let mut prior = BlrPrior::new(k0, l, noise_covariance(&self.params)?)?;
        prior.fixed_lambda0 = raw.frozen;
        Ok(prior)
    }

    /// `K₀` and the lower factor of `Λ₀` as graph nodes.
    pub fn prior_nodes(&self, g: &mut Graph, params: &ParamStore) -> Result<(Var, Var)> {
        let k0 = g.param(params, K0_PARAM)?;
        let raw = g.param(params, LAMBDA0_PARAM)?;
        Ok((k0, g.tril_exp_diag(raw)))
    }
}

impl Predictor for LatentBlr {
    fn predict(&self, x_c: &Matrix, y_c: &Matrix, x_t: &Matrix) -> Result<KroneckerGaussian> {
        let prior = self.prior()?;
        let post = blr::posterior_update(&prior, &self.features(x_c)?, y_c)?;
        blr::predict(&post, &self.features(x_t)?)
    }
}

impl Predictor for GprModel {
    fn predict(&self, x_c: &Matrix, y_c: &Matrix, x_t: &Matrix) -> Result<KroneckerGaussian> {
        self.posterior_predict(x_c, y_c, x_t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Model {
    Blr(LatentBlr),
    Gpr(GprModel),
}

impl Model {
    pub fn params(&self) -> &ParamStore {
        match self {
            Model::Blr(m) => &m.params,
            Model::Gpr(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        match self {
            Model::Blr(m) => &mut m.params,
            Model::Gpr(m) => &mut m.params,
        }
    }

    pub fn n_outputs(&self) -> usize {
        match self {
            Model::Blr(m) => m.n_y,
            Model::Gpr(m) => m.n_outputs(),
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            Model::Blr(_) => "BLR",
            Model::Gpr(_) => "GPR",
        }
    }

    pub fn sigma_eps(&self) -> Result<Matrix> {
        noise_covariance(self.params())
    }

    /// Joint prior predictive over `x`.
    pub fn joint_prior(&self, x: &Matrix) -> Result<KroneckerGaussian> {
        let empty = Matrix::zeros(0, x.cols());
        self.predict(&empty, &Matrix::zeros(0, self.n_outputs()), x)
    }

    pub fn to_checkpoint(&self, seed: u64) -> Result<Checkpoint> {
        Ok(Checkpoint {
            seed,
            model: serde_json::to_value(self)?,
            params: self.params().clone(),
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut model: Model = serde_json::from_value(ck.model.clone())?;
        *model.params_mut() = ck.params.clone();
        Ok(model)
    }
}

impl Predictor for Model {
    fn predict(&self, x_c: &Matrix, y_c: &Matrix, x_t: &Matrix) -> Result<KroneckerGaussian> {
        match self {
            Model::Blr(m) => m.predict(x_c, y_c, x_t),
            Model::Gpr(m) => m.predict(x_c, y_c, x_t),
        }
    }
}

/// Architecture knobs shared by all methods.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelOptions {
    pub hidden: Vec<usize>,
    /// Width of the final feature layer (`n_φ`).
    pub latent_dim: usize,
    pub activation: Activation,
    /// Freeze `Λ₀` at the identity.
    pub fix_lambda0: bool,
    pub fix_noise: bool,
    pub init_noise_var: f64,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            latent_dim: 32,
            activation: Activation::Tanh,
            fix_lambda0: true,
            fix_noise: false,
            init_noise_var: 1.0,
        }
    }
}

impl ModelOptions {
    fn net(&self, name: &str, n_x: usize, out: usize) -> FeatureNetSpec {
        let mut net = FeatureNetSpec::new(name, n_x, self.hidden.clone(), out);
        net.activation = self.activation;
        net
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "GPR-SE-IN")]
    GprSeIn,
    #[serde(rename = "GPR-DSE-IN")]
    GprDseIn,
    #[serde(rename = "GPR-DL-IN")]
    GprDlIn,
    #[serde(rename = "GPR-DL-SN")]
    GprDlSn,
    #[serde(rename = "BLR-PR-FC")]
    BlrPrFc,
    #[serde(rename = "BLR-PR-DC")]
    BlrPrDc,
    #[serde(rename = "BLR-POO-D/FC")]
    BlrPoo,
    #[serde(rename = "BLR-POM-FC")]
    BlrPomFc,
    #[serde(rename = "BLR-POM-DC")]
    BlrPomDc,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::GprSeIn,
        Method::GprDseIn,
        Method::GprDlIn,
        Method::GprDlSn,
        Method::BlrPrFc,
        Method::BlrPrDc,
        Method::BlrPoo,
        Method::BlrPomFc,
        Method::BlrPomDc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::GprSeIn => "GPR-SE-IN",
            Method::GprDseIn => "GPR-DSE-IN",
            Method::GprDlIn => "GPR-DL-IN",
            Method::GprDlSn => "GPR-DL-SN",
            Method::BlrPrFc => "BLR-PR-FC",
            Method::BlrPrDc => "BLR-PR-DC",
            Method::BlrPoo => "BLR-POO-D/FC",
            Method::BlrPomFc => "BLR-POM-FC",
            Method::BlrPomDc => "BLR-POM-DC",
        }
    }

    pub fn is_gpr(self) -> bool {
        matches!(
            self,
            Method::GprSeIn | Method::GprDseIn | Method::GprDlIn | Method::GprDlSn
        )
    }

    pub fn loss(self) -> LossKind {
        match self {
            Method::BlrPrDc => LossKind::PrDc,
            Method::BlrPoo => LossKind::Poo,
            Method::BlrPomFc => LossKind::PomFc,
            Method::BlrPomDc => LossKind::PomDc,
            _ => LossKind::PrFc,
        }
    }

    pub fn build(self, n_x: usize, n_y: usize, opts: &ModelOptions, rng: &mut impl Rng) -> Result<Model> {
        if n_x == 0 || n_y == 0 {
            return Err(Error::InvalidConfig(
                "input and output dimensions must be positive".into(),
            ));
        }
        if !self.is_gpr() {
            let net = opts.net("phi", n_x, opts.latent_dim);
            let m = LatentBlr::new(net, n_y, opts.fix_lambda0, opts.fix_noise, opts.init_noise_var, rng)?;
            return Ok(Model::Blr(m));
        }
        let kernel_net = || opts.net("kernel_net", n_x, opts.latent_dim);
        let independent = || MeanSpec::independent(opts.net("mean_net", n_x, n_y));
        let (kernel, mean) = match self {
            Method::GprSeIn => (KernelSpec::new(KernelKind::SeRaw, None)?, independent()),
            Method::GprDseIn => (KernelSpec::new(KernelKind::DeepSe, Some(kernel_net()))?, independent()),
            Method::GprDlIn => (
                KernelSpec::new(KernelKind::DeepLinear, Some(kernel_net()))?,
                independent(),
            ),
            Method::GprDlSn => (
                KernelSpec::new(KernelKind::DeepLinear, Some(kernel_net()))?,
                MeanSpec::shared_head(n_y),
            ),
            _ => unreachable!(),
        };
        let mut m = GprModel::new(kernel, mean, opts.init_noise_var, rng)?;
        m.params.set_frozen(NOISE_PARAM, opts.fix_noise)?;
        Ok(Model::Gpr(m))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::max_rel_err;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_opts() -> ModelOptions {
        ModelOptions {
            hidden: vec![6],
            latent_dim: 4,
            ..Default::default()
        }
    }

    #[test]
    fn method_strings_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.as_str()));
            assert_eq!(serde_json::from_str::<Method>(&json).unwrap(), m);
        }
        assert!("BLR-XX".parse::<Method>().is_err());
        assert_eq!(Method::ALL.iter().filter(|m| m.is_gpr()).count(), 4);
        assert_eq!(Method::GprDlSn.loss(), LossKind::PrFc);
        assert_eq!(Method::BlrPoo.loss(), LossKind::Poo);
    }

    #[test]
    fn every_method_builds_and_predicts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let xc = Matrix::from_fn(3, 2, |i, j| (i + j) as f64 * 0.3);
        let yc = Matrix::from_fn(3, 1, |i, _| i as f64);
        let xt = Matrix::from_fn(2, 2, |i, j| (i * j) as f64 - 0.5);
        for m in Method::ALL {
            let model = m.build(2, 1, &small_opts(), &mut rng).unwrap();
            let p = model.predict(&xc, &yc, &xt).unwrap();
            assert_eq!(p.mean.shape(), (2, 1));
            assert!(p.row_cov.diag().iter().all(|&v| v >= 1.0 - 1e-12));
            assert_eq!(model.family(), if m.is_gpr() { "GPR" } else { "BLR" });
        }
    }

    #[test]
    fn option_switches_freeze_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let opts = ModelOptions {
            fix_noise: true,
            ..small_opts()
        };
        let m = Method::BlrPrFc.build(1, 2, &opts, &mut rng).unwrap();
        assert!(m.params().param(LAMBDA0_PARAM).unwrap().frozen);
        assert!(m.params().param(NOISE_PARAM).unwrap().frozen);
        let Model::Blr(b) = &m else { unreachable!() };
        let prior = b.prior().unwrap();
        assert_eq!(prior.lambda0_chol, Matrix::identity(4));
        assert!(prior.fixed_lambda0);

        let g = Method::GprSeIn.build(1, 1, &small_opts(), &mut rng).unwrap();
        assert!(!g.params().param(NOISE_PARAM).unwrap().frozen);
    }

    #[test]
    fn checkpoint_round_trip_preserves_predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Matrix::from_fn(4, 1, |i, _| i as f64 - 1.5);
        let y = Matrix::from_fn(4, 1, |i, _| (i as f64).sin());
        for m in [Method::BlrPomFc, Method::GprDlSn, Method::GprDseIn] {
            let model = m.build(1, 1, &small_opts(), &mut rng).unwrap();
            let ck = model.to_checkpoint(9).unwrap();
            let text = ck.to_json().unwrap();
            let back = Model::from_checkpoint(&Checkpoint::from_json(&text).unwrap()).unwrap();
            assert_eq!(back, model);
            let a = model.predict(&x.slice_rows(0, 2), &y.slice_rows(0, 2), &x).unwrap();
            let b = back.predict(&x.slice_rows(0, 2), &y.slice_rows(0, 2), &x).unwrap();
            assert_eq!(max_rel_err(&a.mean, &b.mean), 0.0);
        }
    }

    #[test]
    fn joint_prior_matches_empty_context() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = Method::BlrPrFc.build(1, 1, &small_opts(), &mut rng).unwrap();
        let x = Matrix::column(&[0.1, 0.5]);
        let jp = model.joint_prior(&x).unwrap();
        let Model::Blr(b) = &model else { unreachable!() };
        let phi = b.features(&x).unwrap();
        assert!(max_rel_err(&jp.row_cov, &phi.matmul_t(&phi).add_diag(1.0)) < 1e-14);
    }
}
