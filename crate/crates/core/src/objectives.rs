//! Meta-training losses. Every loss is a negative log-likelihood averaged over
//! the evaluated samples of a task, then over the tasks of a batch.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::gpr::NOISE_PARAM;
use crate::model::{LatentBlr, Model, Predictor};
use crate::numerics::{Matrix, LN_2PI};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LossKind {
    /// Joint prior likelihood of the whole task.
    PrFc,
    /// Per-sample marginal prior likelihood.
    PrDc,
    /// Condition on the first `t` samples, score sample `t`.
    Poo,
    /// Condition on the first `t` samples, joint likelihood of the rest.
    PomFc,
    /// Condition on the first `t` samples, marginal likelihood of each of the rest.
    PomDc,
}

impl LossKind {
    pub fn is_posterior(self) -> bool {
        matches!(self, LossKind::Poo | LossKind::PomFc | LossKind::PomDc)
    }

    fn is_joint(self) -> bool {
        matches!(self, LossKind::PrFc | LossKind::PomFc)
    }

    /// `(n_context, eval_end)`: condition on rows `..n_context`, score rows
    /// `n_context..eval_end`.
    fn split(self, n: usize, t: usize) -> (usize, usize) {
        match self {
            LossKind::PrFc | LossKind::PrDc => (0, n),
            LossKind::Poo => (t, t + 1),
            LossKind::PomFc | LossKind::PomDc => (t, n),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HorizonSampling {
    /// `t ~ Uniform{0, ..., T-1}`, drawn per task and per step.
    #[default]
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    #[serde(default)]
    pub horizon_sampling: HorizonSampling,
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            horizon_sampling: HorizonSampling::Uniform,
        }
    }

    /// Split point for a task of `n` samples; prior losses always use 0.
    pub fn sample_horizon(&self, n: usize, rng: &mut impl Rng) -> usize {
        if self.kind.is_posterior() && n > 1 {
            rng.random_range(0..n)
        } else {
            0
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchTask {
    pub x: Matrix,
    pub y: Matrix,
    pub t: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TaskBatch {
    pub tasks: Vec<BatchTask>,
}

impl TaskBatch {
    pub fn single(x: Matrix, y: Matrix, t: usize) -> Self {
        Self {
            tasks: vec![BatchTask { x, y, t }],
        }
    }
}

pub fn check_compatible(kind: LossKind, model: &Model) -> Result<()> {
    match model {
        Model::Gpr(_) if kind != LossKind::PrFc => Err(Error::IncompatibleModelLoss {
            model: "GPR".into(),
            loss: format!("{kind:?}"),
        }),
        _ => Ok(()),
    }
}

fn validate_task(task: &BatchTask, n_y: usize) -> Result<()> {
    let n = task.x.rows();
    if n == 0 || task.y.rows() != n || task.y.cols() != n_y {
        return Err(Error::dims(format!(
            "task X {:?}, Y {:?} for n_y={n_y}",
            task.x.shape(),
            task.y.shape()
        )));
    }
    if task.t >= n {
        return Err(Error::InvalidArgument(format!(
            "split point {} for a task of {n} samples",
            task.t
        )));
    }
    Ok(())
}

/// Sum of per-entry log-densities under `N(mean_ik, R_ii σ²_k)`.
fn marginal_logpdf(g: &mut Graph, y: Var, mean: Var, row_cov: Var, log_var: Var) -> Var {
    let (n, n_y) = g.shape(y);
    let d = g.diag(row_cov);
    let log_d = g.log(d);
    let log_v = g.outer_add(log_d, log_var);
    let e = g.sub(y, mean);
    let e2 = g.square(e);
    let neg = g.neg(log_v);
    let prec = g.exp(neg);
    let q = g.mul(e2, prec);
    let quad = g.sum(q);
    let logs = g.sum(log_v);
    let total = g.add(quad, logs);
    let total = g.add_scalar(total, (n * n_y) as f64 * LN_2PI);
    g.scale(total, -0.5)
}

/// Matrix-normal log-density with column covariance `diag(exp(log_var))`.
fn joint_logpdf(g: &mut Graph, y: Var, mean: Var, row_cov: Var, log_var: Var) -> Result<Var> {
    let (n, n_y) = g.shape(y);
    if n == 1 {
        // One row has no cross-covariance; use the marginal form so the two
        // routes agree bit for bit.
        return Ok(marginal_logpdf(g, y, mean, row_cov, log_var));
    }
    let l = g.cholesky(row_cov)?;
    let e = g.sub(y, mean);
    let z = g.solve_lower(l, e);
    let css = g.col_sum_sq(z);
    let neg = g.neg(log_var);
    let prec = g.exp(neg);
    let q = g.mul(css, prec);
    let quad = g.sum(q);
    let ld = g.logdet_chol(l);
    let ld = g.scale(ld, n_y as f64);
    let slv = g.sum(log_var);
    let slv = g.scale(slv, n as f64);
    let total = g.add(quad, ld);
    let total = g.add(total, slv);
    let total = g.add_scalar(total, (n * n_y) as f64 * LN_2PI);
    Ok(g.scale(total, -0.5))
}

fn score(g: &mut Graph, kind: LossKind, y: Var, mean: Var, row_cov: Var, log_var: Var) -> Result<Var> {
    if kind.is_joint() {
        joint_logpdf(g, y, mean, row_cov, log_var)
    } else {
        Ok(marginal_logpdf(g, y, mean, row_cov, log_var))
    }
}

fn blr_task_logpdf(
    g: &mut Graph,
    kind: LossKind,
    m: &LatentBlr,
    params: &ParamStore,
    task: &BatchTask,
) -> Result<(Var, usize)> {
    let n = task.x.rows();
    let (n_c, end) = kind.split(n, task.t);
    let x = g.constant(task.x.clone());
    let phi = m.feature_net.forward(g, params, x)?;
    let (k0, l) = m.prior_nodes(g, params)?;
    let log_var = g.param(params, NOISE_PARAM)?;

    let (m_chol, k_tau) = if n_c == 0 {
        (l, k0)
    } else {
        let idx: Vec<usize> = (0..n_c).collect();
        let phi_c = g.select_rows(phi, &idx);
        let y_c = g.constant(task.y.slice_rows(0, n_c));
        let ptp = g.t_matmul(phi_c, phi_c);
        let prior_prec = g.matmul_t(l, l);
        let lam = g.add(ptp, prior_prec);
        let m_chol = g.cholesky(lam)?;
        let py = g.t_matmul(phi_c, y_c);
        let lk = g.matmul(prior_prec, k0);
        let rhs = g.add(py, lk);
        let half = g.solve_lower(m_chol, rhs);
        (m_chol, g.solve_upper(m_chol, half))
    };

    let phi_e = if (n_c, end) == (0, n) {
        phi
    } else {
        let idx: Vec<usize> = (n_c..end).collect();
        g.select_rows(phi, &idx)
    };
    let y_e = g.constant(task.y.slice_rows(n_c, end));
    let mean = g.matmul(phi_e, k_tau);
    let pt = g.transpose(phi_e);
    let w = g.solve_lower(m_chol, pt);
    let wtw = g.t_matmul(w, w);
    let row_cov = g.add_diag(wtw, 1.0);
    Ok((score(g, kind, y_e, mean, row_cov, log_var)?, end - n_c))
}

/// Negative log-likelihood of one task, averaged over its evaluated samples.
pub fn task_loss(g: &mut Graph, kind: LossKind, model: &Model, params: &ParamStore, task: &BatchTask) -> Result<Var> {
    check_compatible(kind, model)?;
    validate_task(task, model.n_outputs())?;
    let (logpdf, n_eval) = match model {
        Model::Blr(m) => blr_task_logpdf(g, kind, m, params, task)?,
        Model::Gpr(m) => {
            let x = g.constant(task.x.clone());
            let (mean, gram) = m.prior_nodes(g, params, x)?;
            let row_cov = g.add_diag(gram, 1.0);
            let y = g.constant(task.y.clone());
            let log_var = g.param(params, NOISE_PARAM)?;
            (score(g, kind, y, mean, row_cov, log_var)?, task.x.rows())
        }
    };
    Ok(g.scale(logpdf, -1.0 / n_eval as f64))
}

/// Batch loss as a single scalar node: the mean of the per-task losses.
pub fn evaluate_loss(
    g: &mut Graph,
    spec: &LossSpec,
    model: &Model,
    params: &ParamStore,
    batch: &TaskBatch,
) -> Result<Var> {
    if batch.tasks.is_empty() {
        return Err(Error::EmptyBatch);
    }
    check_compatible(spec.kind, model)?;
    let mut total: Option<Var> = None;
    for task in &batch.tasks {
        let l = task_loss(g, spec.kind, model, params, task)?;
        total = Some(match total {
            Some(acc) => g.add(acc, l),
            None => l,
        });
    }
    Ok(g.scale(total.unwrap(), 1.0 / batch.tasks.len() as f64))
}

/// Loss value only, in the model's own parameters.
pub fn loss_value(spec: &LossSpec, model: &Model, batch: &TaskBatch) -> Result<f64> {
    let mut g = Graph::new();
    let l = evaluate_loss(&mut g, spec, model, model.params(), batch)?;
    Ok(g.value(l).item())
}

/// Batch loss and its gradient. Tasks are differentiated independently (in
/// parallel) and reduced in task order, so the result does not depend on the
/// number of threads.
pub fn loss_and_grad(
    spec: &LossSpec,
    model: &Model,
    params: &ParamStore,
    batch: &TaskBatch,
) -> Result<(f64, ParamStore)> {
    if batch.tasks.is_empty() {
        return Err(Error::EmptyBatch);
    }
    check_compatible(spec.kind, model)?;
    let per_task: Vec<Result<(f64, Vec<f64>)>> = batch
        .tasks
        .par_iter()
        .map(|task| {
            let mut g = Graph::new();
            let l = task_loss(&mut g, spec.kind, model, params, task)?;
            let grads = g.backward(l, params)?;
            Ok((g.value(l).item(), grads.flatten()))
        })
        .collect();
    let scale = 1.0 / batch.tasks.len() as f64;
    let mut loss = 0.0;
    let mut flat = vec![0.0; params.num_scalars()];
    for r in per_task {
        let (l, g) = r?;
        loss += l;
        for (acc, v) in flat.iter_mut().zip(&g) {
            *acc += v;
        }
    }
    let mut grads = params.zeros_like();
    grads.unflatten(&flat.iter().map(|v| v * scale).collect::<Vec<_>>())?;
    Ok((loss * scale, grads))
}

/// Both sides of `Σ_t log q(y_{t+1} | x_{t+1}, D_t) = log l(D_T)` for the task's
/// samples taken in `ordering`.
pub fn chain_rule_identity<P: Predictor + ?Sized>(
    model: &P,
    x: &Matrix,
    y: &Matrix,
    ordering: &[usize],
) -> Result<(f64, f64)> {
    let n = x.rows();
    if n == 0 || y.rows() != n {
        return Err(Error::dims(format!("task X {:?}, Y {:?}", x.shape(), y.shape())));
    }
    let mut seen = vec![false; n];
    if ordering.len() != n
        || !ordering
            .iter()
            .all(|&i| i < n && !std::mem::replace(&mut seen[i], true))
    {
        return Err(Error::InvalidArgument(
            "ordering must be a permutation of the samples".into(),
        ));
    }
    let x = x.select_rows(ordering);
    let y = y.select_rows(ordering);
    let mut lhs = 0.0;
    for t in 0..n {
        let p = model.predict(&x.slice_rows(0, t), &y.slice_rows(0, t), &x.slice_rows(t, t + 1))?;
        lhs += p.logpdf(&y.slice_rows(t, t + 1))?;
    }
    let rhs = model
        .predict(&Matrix::zeros(0, x.cols()), &Matrix::zeros(0, y.cols()), &x)?
        .logpdf(&y)?;
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;
    use crate::model::{Method, ModelOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// BLR with the identity feature map, K₀ = 0, Λ₀ = 1 and Σ_ε = 1.
    fn identity_blr() -> Model {
        let opts = ModelOptions {
            hidden: vec![],
            latent_dim: 1,
            ..Default::default()
        };
        let mut m = Method::BlrPrFc
            .build(1, 1, &opts, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        m.params_mut().set("phi.w0", Matrix::scalar(1.0)).unwrap();
        m
    }

    fn two_points() -> (Matrix, Matrix) {
        (Matrix::column(&[1.0, 2.0]), Matrix::column(&[1.0, 0.0]))
    }

    fn loss(kind: LossKind, m: &Model, x: &Matrix, y: &Matrix, t: usize) -> f64 {
        loss_value(&LossSpec::new(kind), m, &TaskBatch::single(x.clone(), y.clone(), t)).unwrap()
    }

    #[test]
    fn hand_values() {
        let m = identity_blr();
        let (x, y) = two_points();
        let joint = 0.5 * (2.0 * LN_2PI + 6f64.ln() + 5.0 / 6.0);
        assert!((joint - 3.150_423).abs() < 1e-6);
        assert!((loss(LossKind::PrFc, &m, &x, &y, 0) - joint / 2.0).abs() < 1e-14);
        let poo = 0.5 * (LN_2PI + 3f64.ln() + 1.0 / 3.0);
        assert!((poo - 1.634_911).abs() < 1e-6);
        assert!((loss(LossKind::Poo, &m, &x, &y, 1) - poo).abs() < 1e-14);
    }

    #[test]
    fn chain_rule_hand_example() {
        let m = identity_blr();
        let (x, y) = two_points();
        let (lhs, rhs) = chain_rule_identity(&m, &x, &y, &[0, 1]).unwrap();
        let first = -0.5 * (LN_2PI + 2f64.ln() + 0.5);
        assert!((first + 1.515_512).abs() < 1e-6);
        assert!((rhs + 3.150_423).abs() < 1e-6);
        assert!((lhs - rhs).abs() < 1e-12);
        let (l1, r1) = chain_rule_identity(&m, &x.slice_rows(0, 1), &y.slice_rows(0, 1), &[0]).unwrap();
        assert_eq!(l1, r1);
        assert!(chain_rule_identity(&m, &x, &y, &[0, 0]).is_err());
    }

    #[test]
    fn single_sample_routes_coincide() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let opts = ModelOptions {
            hidden: vec![4],
            latent_dim: 3,
            ..Default::default()
        };
        let m = Method::BlrPrFc.build(1, 2, &opts, &mut rng).unwrap();
        let x = Matrix::scalar(0.3);
        let y = Matrix::from_rows(&[vec![0.5, -1.0]]);
        assert_eq!(loss(LossKind::PrFc, &m, &x, &y, 0), loss(LossKind::PrDc, &m, &x, &y, 0));
        let poo = loss(LossKind::Poo, &m, &x, &y, 0);
        assert_eq!(loss(LossKind::PomFc, &m, &x, &y, 0), poo);
        assert_eq!(loss(LossKind::PomDc, &m, &x, &y, 0), poo);
    }

    fn random_task(n: usize, n_y: usize, rng: &mut impl Rng) -> (Matrix, Matrix) {
        (
            Matrix::from_fn(n, 1, |_, _| rng.random_range(-3.0..3.0)),
            Matrix::from_fn(n, n_y, |_, _| rng.random_range(-2.0..2.0)),
        )
    }

    fn small_opts() -> ModelOptions {
        ModelOptions {
            hidden: vec![5],
            latent_dim: 3,
            fix_lambda0: false,
            ..Default::default()
        }
    }

    #[test]
    fn graph_losses_match_predictive_densities() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for method in Method::ALL {
            let mut m = method.build(1, 2, &small_opts(), &mut rng).unwrap();
            // Move away from the symmetric initialization.
            let flat: Vec<f64> = m
                .params()
                .flatten()
                .iter()
                .map(|v| v + rng.random_range(-0.3..0.3))
                .collect();
            m.params_mut().unflatten(&flat).unwrap();
            let (x, y) = random_task(7, 2, &mut rng);
            let jp = m.joint_prior(&x).unwrap();
            let pr = -jp.logpdf(&y).unwrap() / 7.0;
            assert!((loss(LossKind::PrFc, &m, &x, &y, 0) - pr).abs() < 1e-12 * pr.abs().max(1.0));
            if method.is_gpr() {
                continue;
            }
            let marg: f64 = (0..7).map(|i| jp.row_marginal_logpdf(&y, i).unwrap()).sum();
            assert!((loss(LossKind::PrDc, &m, &x, &y, 0) + marg / 7.0).abs() < 1e-12);

            let t = 3;
            let p = m
                .predict(&x.slice_rows(0, t), &y.slice_rows(0, t), &x.slice_rows(t, 7))
                .unwrap();
            let yt = y.slice_rows(t, 7);
            let pom = -p.logpdf(&yt).unwrap() / 4.0;
            assert!((loss(LossKind::PomFc, &m, &x, &y, t) - pom).abs() < 1e-10);
            let dc: f64 = (0..4).map(|i| p.row_marginal_logpdf(&yt, i).unwrap()).sum();
            assert!((loss(LossKind::PomDc, &m, &x, &y, t) + dc / 4.0).abs() < 1e-10);
            let poo = -p.row_marginal_logpdf(&yt, 0).unwrap();
            assert!((loss(LossKind::Poo, &m, &x, &y, t) - poo).abs() < 1e-10);
            assert_eq!(
                loss(LossKind::PomFc, &m, &x, &y, 0),
                loss(LossKind::PrFc, &m, &x, &y, 0)
            );
        }
    }

    #[test]
    fn diagonal_row_covariance_makes_fc_equal_dc() {
        // Orthogonal feature rows give a diagonal I + ΦΦᵀ.
        let opts = ModelOptions {
            hidden: vec![],
            latent_dim: 2,
            ..Default::default()
        };
        let mut m = Method::BlrPrFc
            .build(2, 1, &opts, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        m.params_mut().set("phi.w0", Matrix::identity(2)).unwrap();
        let x = Matrix::from_rows(&[vec![1.5, 0.0], vec![0.0, -0.7]]);
        let y = Matrix::column(&[0.4, 2.0]);
        let fc = loss(LossKind::PrFc, &m, &x, &y, 0);
        let dc = loss(LossKind::PrDc, &m, &x, &y, 0);
        assert!((fc - dc).abs() < 1e-14);
    }

    #[test]
    fn gpr_rejects_posterior_and_diagonal_losses() {
        let m = Method::GprSeIn
            .build(1, 1, &small_opts(), &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        let b = TaskBatch::single(Matrix::column(&[0.0, 1.0]), Matrix::column(&[0.0, 1.0]), 0);
        for kind in [LossKind::PrDc, LossKind::Poo, LossKind::PomFc, LossKind::PomDc] {
            assert!(matches!(
                loss_value(&LossSpec::new(kind), &m, &b),
                Err(Error::IncompatibleModelLoss { .. })
            ));
        }
        assert!(matches!(
            loss_value(&LossSpec::new(LossKind::PrFc), &m, &TaskBatch::default()),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn horizon_sampling_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pr = LossSpec::new(LossKind::PrFc);
        let post = LossSpec::new(LossKind::PomDc);
        let mut seen = [false; 5];
        for _ in 0..200 {
            assert_eq!(pr.sample_horizon(5, &mut rng), 0);
            seen[post.sample_horizon(5, &mut rng)] = true;
        }
        assert!(seen.iter().all(|&s| s));
        assert_eq!(post.sample_horizon(1, &mut rng), 0);
    }

    #[test]
    fn gradients_pass_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cases = [
            (Method::BlrPrFc, LossKind::PrFc),
            (Method::BlrPrDc, LossKind::PrDc),
            (Method::BlrPoo, LossKind::Poo),
            (Method::BlrPomFc, LossKind::PomFc),
            (Method::BlrPomDc, LossKind::PomDc),
            (Method::GprDseIn, LossKind::PrFc),
            (Method::GprDlSn, LossKind::PrFc),
        ];
        for (method, kind) in cases {
            let m = method.build(1, 2, &small_opts(), &mut rng).unwrap();
            let tasks = (0..2)
                .map(|_| {
                    let (x, y) = random_task(5, 2, &mut rng);
                    BatchTask {
                        x,
                        y,
                        t: rng.random_range(0..5),
                    }
                })
                .collect();
            let batch = TaskBatch { tasks };
            let spec = LossSpec::new(kind);
            let err = finite_diff_check(|g, p| evaluate_loss(g, &spec, &m, p, &batch), m.params(), 1e-5).unwrap();
            assert!(err <= 1e-4, "{method}: {err:e}");

            let mut g = Graph::new();
            let l = evaluate_loss(&mut g, &spec, &m, m.params(), &batch).unwrap();
            let direct = g.backward(l, m.params()).unwrap().flatten();
            let (v, par) = loss_and_grad(&spec, &m, m.params(), &batch).unwrap();
            assert!((v - g.value(l).item()).abs() < 1e-12);
            let gap = direct
                .iter()
                .zip(par.flatten())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(gap < 1e-12);
        }
    }
}
