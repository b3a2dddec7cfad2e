use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

use super::{Graph, ParamStore, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

/// A fully connected feature map `φ: R^input_dim -> R^output_dim`.
///
/// Hidden layers apply the activation; the output layer is affine. Parameters
/// are stored as `{name}.w{l}` (fan_in x fan_out) and `{name}.b{l}` (1 x fan_out).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureNetSpec {
    pub name: String,
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl FeatureNetSpec {
    pub fn new(name: impl Into<String>, input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Self {
        Self {
            name: name.into(),
            input_dim,
            hidden,
            output_dim,
            activation: Activation::Tanh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "feature net `{}` has a zero-width layer",
                self.name
            )));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden);
        w.push(self.output_dim);
        w
    }

    pub fn n_layers(&self) -> usize {
        self.hidden.len() + 1
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.w{layer}", self.name)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.b{layer}", self.name)
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_params(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        self.validate()?;
        let widths = self.widths();
        for l in 0..self.n_layers() {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-bound..=bound));
            store.insert(self.weight_name(l), w)?;
            store.insert(self.bias_name(l), Matrix::zeros(1, fan_out))?;
        }
        Ok(())
    }

    /// Feature matrix `Φ(X)`, one sample per row.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let widths = self.widths();
        if g.shape(x).1 != self.input_dim {
            return Err(Error::dims(format!(
                "feature net `{}` expects {} inputs, got {}",
                self.name,
                self.input_dim,
                g.shape(x).1
            )));
        }
        let mut h = x;
        for l in 0..self.n_layers() {
            let w = g.param(store, &self.weight_name(l))?;
            let b = g.param(store, &self.bias_name(l))?;
            if g.shape(w) != (widths[l], widths[l + 1]) || g.shape(b) != (1, widths[l + 1]) {
                return Err(Error::dims(format!(
                    "layer {l} of `{}`: weight {:?}, bias {:?}",
                    self.name,
                    g.shape(w),
                    g.shape(b)
                )));
            }
            let z = g.matmul(h, w);
            h = g.add_row(z, b);
            if l + 1 < self.n_layers() {
                h = match self.activation {
                    Activation::Tanh => g.tanh(h),
                    Activation::Relu => g.relu(h),
                };
            }
        }
        Ok(h)
    }

    /// Forward pass returning only the value.
    pub fn features(&self, store: &ParamStore, x: &Matrix) -> Result<Matrix> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, store, xv)?;
        Ok(g.value(out).clone())
    }
}
