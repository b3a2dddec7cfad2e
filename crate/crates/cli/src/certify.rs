//! Equivalence certification: BLR against the linear-kernel GP, invariance
//! under feature reparametrization, and the sequential chain-rule identity.

use std::time::Instant;

use metabayes::blr::{self, BlrPrior};
use metabayes::gpr::posterior_predict_linear;
use metabayes::model::{Method, ModelOptions};
use metabayes::numerics::{condition_number, max_rel_err};
use metabayes::objectives::chain_rule_identity;
use metabayes::{KroneckerGaussian, Matrix, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const TOLERANCE: f64 = 1e-8;
/// Transforms at or above this condition number are redrawn.
pub const MAX_DRAWN_CONDITION: f64 = 1e6;
pub const MAX_CHAIN_LENGTH: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeCaps {
    pub n_phi: usize,
    pub n_context: usize,
    pub n_test: usize,
    pub n_y: usize,
}

impl Default for SizeCaps {
    fn default() -> Self {
        Self {
            n_phi: 8,
            n_context: 20,
            n_test: 10,
            n_y: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub seed: u64,
    pub instances: usize,
    pub chain_instances: usize,
    pub caps: SizeCaps,
    /// Negative control: perturb `Λ₀` on the GP side of the first suite.
    pub corrupt_lambda0: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            instances: 200,
            chain_instances: 500,
            caps: SizeCaps::default(),
            corrupt_lambda0: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub name: String,
    pub instances: usize,
    pub max_mean_err: f64,
    pub max_row_cov_err: f64,
    pub max_col_cov_err: f64,
    pub max_err: f64,
    pub passed: bool,
    pub seconds: f64,
    /// Total conditioning time per route.
    pub timings: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub tolerance: f64,
    pub options: VerifyOptions,
    pub suites: Vec<SuiteReport>,
    pub passed: bool,
}

fn random(r: usize, c: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-2.0..2.0))
}

fn random_prior(n_phi: usize, n_y: usize, rng: &mut impl Rng) -> Result<BlrPrior> {
    let l = Matrix::from_fn(n_phi, n_phi, |i, j| {
        if i > j {
            rng.random_range(-0.5..0.5)
        } else if i == j {
            rng.random_range(0.5..1.5)
        } else {
            0.0
        }
    });
    let k0 = Matrix::from_fn(n_phi, n_y, |_, _| rng.random_range(-1.0..1.0));
    let noise: Vec<f64> = (0..n_y).map(|_| rng.random_range(0.2..2.0)).collect();
    BlrPrior::new(k0, l, Matrix::from_diag(&noise))
}

/// Errors of `b` relative to `a` for mean, row and column covariance.
fn compare(a: &KroneckerGaussian, b: &KroneckerGaussian) -> [f64; 3] {
    [
        max_rel_err(&b.mean, &a.mean),
        max_rel_err(&b.row_cov, &a.row_cov),
        max_rel_err(&b.col_cov, &a.col_cov),
    ]
}

struct Tracker {
    errs: [f64; 3],
}

impl Tracker {
    fn new() -> Self {
        Self { errs: [0.0; 3] }
    }

    /// NaN counts as a failure.
    fn push(&mut self, e: [f64; 3]) {
        for (acc, v) in self.errs.iter_mut().zip(e) {
            *acc = if v.is_nan() { f64::INFINITY } else { acc.max(v) };
        }
    }

    fn finish(self, name: &str, instances: usize, start: Instant, timings: Vec<(String, f64)>) -> SuiteReport {
        let max_err = self.errs.iter().cloned().fold(0.0, f64::max);
        SuiteReport {
            name: name.to_string(),
            instances,
            max_mean_err: self.errs[0],
            max_row_cov_err: self.errs[1],
            max_col_cov_err: self.errs[2],
            max_err,
            passed: max_err <= TOLERANCE,
            seconds: start.elapsed().as_secs_f64(),
            timings,
        }
    }
}

fn draw_sizes(caps: &SizeCaps, rng: &mut impl Rng) -> (usize, usize, usize, usize) {
    (
        rng.random_range(1..=caps.n_phi),
        rng.random_range(0..=caps.n_context),
        rng.random_range(1..=caps.n_test),
        rng.random_range(1..=caps.n_y),
    )
}

/// BLR predictive against the GP with kernel `φΛ₀⁻¹φᵀ` and mean `φK₀`.
pub fn blr_vs_linear_gp(opts: &VerifyOptions) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let start = Instant::now();
    let mut tr = Tracker::new();
    let (mut t_blr, mut t_gp) = (0.0, 0.0);
    for _ in 0..opts.instances {
        let (n_phi, n_c, n_t, n_y) = draw_sizes(&opts.caps, &mut rng);
        let prior = random_prior(n_phi, n_y, &mut rng)?;
        let phi_c = random(n_c, n_phi, &mut rng);
        let y_c = random(n_c, n_y, &mut rng);
        let phi_t = random(n_t, n_phi, &mut rng);
        let gp_prior = if opts.corrupt_lambda0 {
            BlrPrior::new(prior.k0.clone(), prior.lambda0_chol.scale(1.5), prior.sigma_eps.clone())?
        } else {
            prior.clone()
        };
        let s = Instant::now();
        let a = blr::predict(&blr::posterior_update(&prior, &phi_c, &y_c)?, &phi_t)?;
        t_blr += s.elapsed().as_secs_f64();
        let s = Instant::now();
        let b = posterior_predict_linear(&gp_prior, &phi_c, &y_c, &phi_t)?;
        t_gp += s.elapsed().as_secs_f64();
        tr.push(compare(&a, &b));
    }
    let timings = vec![("blr".to_string(), t_blr), ("gpr-linear".to_string(), t_gp)];
    Ok(tr.finish("blr-equals-linear-gp", opts.instances, start, timings))
}

/// Predictive under `(K₀, Λ₀, φ)` against `(LpᵀK₀, Lp⁻¹Λ₀Lp⁻ᵀ, Lp⁻¹φ)`.
pub fn transform_invariance(opts: &VerifyOptions) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed_0002);
    let start = Instant::now();
    let mut tr = Tracker::new();
    let (mut t_orig, mut t_trans) = (0.0, 0.0);
    for _ in 0..opts.instances {
        let (n_phi, n_c, n_t, n_y) = draw_sizes(&opts.caps, &mut rng);
        let prior = random_prior(n_phi, n_y, &mut rng)?;
        let lp = loop {
            let m = random(n_phi, n_phi, &mut rng);
            if condition_number(&m) < MAX_DRAWN_CONDITION {
                break m;
            }
        };
        let (tp, map) = blr::transform_prior(&prior, &lp)?;
        let phi_c = random(n_c, n_phi, &mut rng);
        let y_c = random(n_c, n_y, &mut rng);
        let phi_t = random(n_t, n_phi, &mut rng);
        let s = Instant::now();
        let a = blr::predict(&blr::posterior_update(&prior, &phi_c, &y_c)?, &phi_t)?;
        t_orig += s.elapsed().as_secs_f64();
        let s = Instant::now();
        let b = blr::predict(
            &blr::posterior_update(&tp, &map.apply(&phi_c)?, &y_c)?,
            &map.apply(&phi_t)?,
        )?;
        t_trans += s.elapsed().as_secs_f64();
        tr.push(compare(&a, &b));
    }
    let timings = vec![("original".to_string(), t_orig), ("transformed".to_string(), t_trans)];
    Ok(tr.finish("transform-invariance", opts.instances, start, timings))
}

/// Sum of one-step-ahead log predictives against the joint log-likelihood,
/// cycling through every method with a random sample ordering. The error
/// is relative to `max(1, |log l|)`.
pub fn chain_rule(opts: &VerifyOptions) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed_0003);
    let start = Instant::now();
    let mut tr = Tracker::new();
    let mut per_method = vec![0.0; Method::ALL.len()];
    let max_t = MAX_CHAIN_LENGTH.min(opts.caps.n_context.max(1));
    for i in 0..opts.chain_instances {
        let k = i % Method::ALL.len();
        let n_x = rng.random_range(1..=2);
        let n_y = rng.random_range(1..=opts.caps.n_y);
        let options = ModelOptions {
            hidden: vec![rng.random_range(1..=6)],
            latent_dim: rng.random_range(1..=opts.caps.n_phi),
            init_noise_var: rng.random_range(0.2..2.0),
            fix_lambda0: false,
            ..Default::default()
        };
        let mut model = Method::ALL[k].build(n_x, n_y, &options, &mut rng)?;
        // Move every parameter away from its initialization.
        let flat: Vec<f64> = model
            .params()
            .flatten()
            .iter()
            .map(|v| v + rng.random_range(-0.3..0.3))
            .collect();
        model.params_mut().unflatten(&flat)?;
        let t = rng.random_range(1..=max_t);
        let x = random(t, n_x, &mut rng);
        let y = random(t, n_y, &mut rng);
        let mut order: Vec<usize> = (0..t).collect();
        order.shuffle(&mut rng);
        let s = Instant::now();
        let (lhs, rhs) = chain_rule_identity(&model, &x, &y, &order)?;
        per_method[k] += s.elapsed().as_secs_f64();
        let e = (lhs - rhs).abs() / rhs.abs().max(1.0);
        tr.push([e, 0.0, 0.0]);
    }
    let timings = Method::ALL
        .iter()
        .zip(per_method)
        .map(|(m, s)| (m.as_str().to_string(), s))
        .collect();
    Ok(tr.finish("chain-rule-identity", opts.chain_instances, start, timings))
}

pub fn verify(opts: &VerifyOptions) -> Result<VerifyReport> {
    let caps = opts.caps;
    if [caps.n_phi, caps.n_test, caps.n_y].contains(&0) {
        return Err(metabayes::Error::InvalidConfig("size caps must be at least 1".into()));
    }
    let suites = vec![blr_vs_linear_gp(opts)?, transform_invariance(opts)?, chain_rule(opts)?];
    let passed = suites.iter().all(|s| s.passed);
    Ok(VerifyReport {
        tolerance: TOLERANCE,
        options: opts.clone(),
        suites,
        passed,
    })
}

pub fn render(report: &VerifyReport) -> String {
    let mut out = String::new();
    for s in &report.suites {
        out.push_str(&format!(
            "{:<22} {:>4} instances  max rel err {:.3e}  ({:.2}s)  {}\n",
            s.name,
            s.instances,
            s.max_err,
            s.seconds,
            if s.passed { "PASS" } else { "FAIL" }
        ));
        for (route, secs) in &s.timings {
            out.push_str(&format!("    {:<14} {:.4}s\n", route, secs));
        }
    }
    out.push_str(if report.passed {
        "all suites passed\n"
    } else {
        "certification FAILED\n"
    });
    out
}
