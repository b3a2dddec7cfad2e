//! Scalar row kernels and mean functions.
//!
//! Every kernel here is separable: the multi-output covariance is the scalar
//! row kernel times the model's output noise covariance `Σ_ε`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{FeatureNetSpec, Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum KernelKind {
    /// Squared exponential on the raw inputs.
    SeRaw,
    /// Squared exponential on learned features.
    DeepSe,
    /// Linear kernel `φ(x)ᵀφ(x')` on learned features.
    DeepLinear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub feature_net: Option<FeatureNetSpec>,
    /// Parameter holding `ln ℓ` (1x1).
    pub log_lengthscale: String,
    /// Parameter holding `ln s²` (1x1).
    pub log_outputscale: String,
}

impl KernelSpec {
    pub fn new(kind: KernelKind, feature_net: Option<FeatureNetSpec>) -> Result<Self> {
        let spec = Self {
            kind,
            feature_net,
            log_lengthscale: "kernel.log_lengthscale".into(),
            log_outputscale: "kernel.log_outputscale".into(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind, &self.feature_net) {
            (KernelKind::SeRaw, Some(_)) => {
                Err(Error::InvalidConfig("SE_RAW kernel must not have a feature net".into()))
            }
            (KernelKind::DeepSe | KernelKind::DeepLinear, None) => {
                Err(Error::InvalidConfig("deep kernels require a feature net".into()))
            }
            (_, Some(net)) => net.validate(),
            _ => Ok(()),
        }
    }

    fn is_se(&self) -> bool {
        matches!(self.kind, KernelKind::SeRaw | KernelKind::DeepSe)
    }

    /// Registers kernel parameters: unit length-scale and output scale.
    pub fn init_params(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        if let Some(net) = &self.feature_net {
            net.init_params(store, rng)?;
        }
        if self.is_se() {
            store.insert(&self.log_lengthscale, Matrix::scalar(0.0))?;
            store.insert(&self.log_outputscale, Matrix::scalar(0.0))?;
        }
        Ok(())
    }

    /// The representation the kernel compares: raw inputs or learned features.
    pub fn representation(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        match &self.feature_net {
            Some(net) => net.forward(g, store, x),
            None => Ok(x),
        }
    }

    /// Gram matrix from an already computed representation `u` (n x d).
    pub fn gram_from_repr(&self, g: &mut Graph, store: &ParamStore, u: Var) -> Result<Var> {
        match self.kind {
            KernelKind::DeepLinear => Ok(g.matmul_t(u, u)),
            KernelKind::SeRaw | KernelKind::DeepSe => {
                let log_l = g.param(store, &self.log_lengthscale)?;
                let log_s2 = g.param(store, &self.log_outputscale)?;
                if g.shape(log_l) != (1, 1) || g.shape(log_s2) != (1, 1) {
                    return Err(Error::dims("kernel scale parameters must be 1x1"));
                }
                // s² exp(-D / (2ℓ²)) = s² exp(c D) with c = -exp(-2 ln ℓ) / 2
                let d = g.pairwise_sq_dist(u);
                let t = g.scale(log_l, -2.0);
                let inv_l2 = g.exp(t);
                let c = g.scale(inv_l2, -0.5);
                let scaled = g.scale_by(c, d);
                let k = g.exp(scaled);
                let s2 = g.exp(log_s2);
                Ok(g.scale_by(s2, k))
            }
        }
    }

    pub fn gram(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        if g.shape(x).0 == 0 {
            return Err(Error::dims("gram of an empty input set"));
        }
        let u = self.representation(g, store, x)?;
        self.gram_from_repr(g, store, u)
    }

    pub fn gram_value(&self, store: &ParamStore, x: &Matrix) -> Result<Matrix> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let k = self.gram(&mut g, store, xv)?;
        Ok(g.value(k).clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MeanKind {
    Zero,
    /// A separate network mapping inputs straight to outputs.
    DeepIndependent,
    /// `m(x) = K₀ᵀ φ(x)` on the kernel's own features.
    SharedHead,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSpec {
    pub kind: MeanKind,
    pub output_dim: usize,
    /// Owned network for `DeepIndependent`; its output width is `output_dim`.
    pub feature_net: Option<FeatureNetSpec>,
    /// `K₀` parameter (n_φ x n_y) for `SharedHead`.
    pub head: Option<String>,
}

impl MeanSpec {
    pub fn zero(output_dim: usize) -> Self {
        Self {
            kind: MeanKind::Zero,
            output_dim,
            feature_net: None,
            head: None,
        }
    }

    pub fn independent(net: FeatureNetSpec) -> Self {
        Self {
            kind: MeanKind::DeepIndependent,
            output_dim: net.output_dim,
            feature_net: Some(net),
            head: None,
        }
    }

    pub fn shared_head(output_dim: usize) -> Self {
        Self {
            kind: MeanKind::SharedHead,
            output_dim,
            feature_net: None,
            head: Some("mean.k0".into()),
        }
    }

    pub fn validate(&self, kernel: &KernelSpec) -> Result<()> {
        match self.kind {
            MeanKind::Zero => Ok(()),
            MeanKind::DeepIndependent => match &self.feature_net {
                Some(net) if net.output_dim == self.output_dim => net.validate(),
                Some(_) => Err(Error::InvalidConfig(
                    "independent mean net output must equal n_y".into(),
                )),
                None => Err(Error::InvalidConfig("DEEP_INDEPENDENT mean needs its own net".into())),
            },
            MeanKind::SharedHead => {
                if kernel.feature_net.is_none() {
                    return Err(Error::InvalidConfig(
                        "SHARED_HEAD mean requires a kernel with a feature net".into(),
                    ));
                }
                if self.head.is_none() {
                    return Err(Error::InvalidConfig("SHARED_HEAD mean needs a K₀ head".into()));
                }
                Ok(())
            }
        }
    }

    pub fn init_params(&self, kernel: &KernelSpec, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        self.validate(kernel)?;
        match self.kind {
            MeanKind::Zero => Ok(()),
            MeanKind::DeepIndependent => self.feature_net.as_ref().unwrap().init_params(store, rng),
            MeanKind::SharedHead => {
                let n_phi = kernel.feature_net.as_ref().unwrap().output_dim;
                store.insert(self.head.clone().unwrap(), Matrix::zeros(n_phi, self.output_dim))
            }
        }
    }

    /// Mean matrix (n x n_y). `kernel_features` must be the kernel's feature
    /// matrix for `SharedHead`.
    pub fn eval(&self, g: &mut Graph, store: &ParamStore, x: Var, kernel_features: Option<Var>) -> Result<Var> {
        let n = g.shape(x).0;
        match self.kind {
            MeanKind::Zero => Ok(g.constant(Matrix::zeros(n, self.output_dim))),
            MeanKind::DeepIndependent => {
                let net = self
                    .feature_net
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig("missing mean net".into()))?;
                net.forward(g, store, x)
            }
            MeanKind::SharedHead => {
                let phi = kernel_features
                    .ok_or_else(|| Error::InvalidConfig("shared-head mean needs kernel features".into()))?;
                let head = self.head.as_deref().unwrap_or("mean.k0");
                let k0 = g.param(store, head)?;
                if g.shape(k0) != (g.shape(phi).1, self.output_dim) {
                    return Err(Error::dims(format!(
                        "head {:?} vs features {:?}",
                        g.shape(k0),
                        g.shape(phi)
                    )));
                }
                Ok(g.matmul(phi, k0))
            }
        }
    }
}

/// Mean matrix for `x`, computing the kernel features only if needed.
pub fn mean_eval(mean: &MeanSpec, kernel: &KernelSpec, store: &ParamStore, x: &Matrix) -> Result<Matrix> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let feats = match mean.kind {
        MeanKind::SharedHead => Some(kernel.representation(&mut g, store, xv)?),
        _ => None,
    };
    let m = mean.eval(&mut g, store, xv, feats)?;
    Ok(g.value(m).clone())
}
