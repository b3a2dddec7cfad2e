//! Bayesian meta-learning with latent-space Bayesian linear regression (BLR)
//! and multi-output Gaussian process regression (GPR).

pub mod autodiff;
pub mod blr;
pub mod data;
pub mod error;
pub mod evalmetrics;
pub mod gpr;
pub mod kernels;
pub mod model;
pub mod numerics;
pub mod objectives;
pub mod trainer;

pub use error::{Error, Result};
pub use numerics::{CholFactor, KroneckerGaussian, Matrix};
