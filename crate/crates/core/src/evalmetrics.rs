//! Test-time metrics: marginal predictive log-likelihood, RMSE and calibration
//! error of central predictive intervals.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::data::{split_context_test, SplitPlan, Task, TaskSet};
use crate::error::{Error, Result};
use crate::model::Predictor;
use crate::numerics::KroneckerGaussian;

pub const DEFAULT_LEVELS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile: Acklam's rational approximation refined by one
/// Halley step on the CDF.
pub fn inverse_normal_cdf(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let p_low = 0.02425;
    let x = if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = normal_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

/// Half-width multiplier of the central interval with coverage `q`.
pub fn central_z(q: f64) -> f64 {
    inverse_normal_cdf(0.5 * (1.0 + q))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Mean per-point marginal log-density, averaged per task then over tasks.
    pub log_likelihood: f64,
    pub rmse: f64,
    pub calibration_error: f64,
    pub n_tasks: usize,
    pub n_points: usize,
    /// `(q, f_q)`: nominal level and empirical coverage.
    pub calibration_curve: Vec<(f64, f64)>,
}

/// Per-task sufficient statistics, merged in task order.
#[derive(Clone, Debug, PartialEq)]
struct TaskStats {
    mean_ll: f64,
    sq_err: f64,
    n_points: usize,
    inside: Vec<usize>,
    n_entries: usize,
}

fn validate_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() || levels.iter().any(|&q| !(q > 0.0 && q < 1.0)) {
        return Err(Error::InvalidArgument(format!(
            "calibration levels must lie in (0, 1): {levels:?}"
        )));
    }
    Ok(())
}

fn task_stats(pred: &KroneckerGaussian, y: &crate::numerics::Matrix, z: &[f64]) -> Result<TaskStats> {
    let (n, n_y) = y.shape();
    if pred.mean.shape() != (n, n_y) {
        return Err(Error::dims(format!(
            "predictive {:?} for targets {:?}",
            pred.mean.shape(),
            y.shape()
        )));
    }
    let mut ll = 0.0;
    let mut sq_err = 0.0;
    let mut inside = vec![0; z.len()];
    for i in 0..n {
        ll += pred.row_marginal_logpdf(y, i)?;
        let mut row_sq = 0.0;
        for k in 0..n_y {
            let e = y[(i, k)] - pred.mean[(i, k)];
            row_sq += e * e;
            let sd = pred.marginal_var(i, k).sqrt();
            for (c, &zq) in inside.iter_mut().zip(z) {
                if e.abs() <= zq * sd {
                    *c += 1;
                }
            }
        }
        sq_err += row_sq / n_y as f64;
    }
    Ok(TaskStats {
        mean_ll: ll / n as f64,
        sq_err,
        n_points: n,
        inside,
        n_entries: n * n_y,
    })
}

fn merge(stats: &[TaskStats], levels: &[f64]) -> MetricReport {
    let n_tasks = stats.len();
    let n_points: usize = stats.iter().map(|s| s.n_points).sum();
    let n_entries: usize = stats.iter().map(|s| s.n_entries).sum();
    let log_likelihood = stats.iter().map(|s| s.mean_ll).sum::<f64>() / n_tasks as f64;
    let rmse = (stats.iter().map(|s| s.sq_err).sum::<f64>() / n_points as f64).sqrt();
    let calibration_curve: Vec<(f64, f64)> = levels
        .iter()
        .enumerate()
        .map(|(j, &q)| {
            let hits: usize = stats.iter().map(|s| s.inside[j]).sum();
            (q, hits as f64 / n_entries as f64)
        })
        .collect();
    let calibration_error =
        (calibration_curve.iter().map(|(q, f)| (f - q).powi(2)).sum::<f64>() / levels.len() as f64).sqrt();
    MetricReport {
        log_likelihood,
        rmse,
        calibration_error,
        n_tasks,
        n_points,
        calibration_curve,
    }
}

/// Metrics of fixed predictives against targets, one pair per task.
pub fn metrics_from_predictions(
    preds: &[(KroneckerGaussian, crate::numerics::Matrix)],
    levels: &[f64],
) -> Result<MetricReport> {
    validate_levels(levels)?;
    if preds.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let z: Vec<f64> = levels.iter().map(|&q| central_z(q)).collect();
    let stats = preds
        .iter()
        .map(|(p, y)| task_stats(p, y, &z))
        .collect::<Result<Vec<_>>>()?;
    Ok(merge(&stats, levels))
}

/// Calibration error and `(q, f_q)` curve from per-entry absolute errors and
/// predictive standard deviations. A zero deviation covers only exact hits.
pub fn calibration_from_residuals(abs_errors: &[f64], stds: &[f64], levels: &[f64]) -> Result<(f64, Vec<(f64, f64)>)> {
    validate_levels(levels)?;
    if abs_errors.len() != stds.len() {
        return Err(Error::dims(format!(
            "{} errors for {} deviations",
            abs_errors.len(),
            stds.len()
        )));
    }
    if abs_errors.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = abs_errors.len() as f64;
    let curve: Vec<(f64, f64)> = levels
        .iter()
        .map(|&q| {
            let z = central_z(q);
            let hits = abs_errors.iter().zip(stds).filter(|(e, sd)| **e <= z * **sd).count();
            (q, hits as f64 / n)
        })
        .collect();
    let err = (curve.iter().map(|(q, f)| (f - q).powi(2)).sum::<f64>() / levels.len() as f64).sqrt();
    Ok((err, curve))
}

/// Seed of the context/test split of test task `index`.
pub fn split_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Condition on a seeded context subset of each task and score the rest.
/// Tasks run in parallel; reductions follow task order.
pub fn evaluate<P: Predictor + ?Sized>(
    model: &P,
    tasks: &[Task],
    n_context: usize,
    levels: &[f64],
    seed: u64,
) -> Result<MetricReport> {
    validate_levels(levels)?;
    if tasks.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let z: Vec<f64> = levels.iter().map(|&q| central_z(q)).collect();
    let stats = tasks
        .par_iter()
        .enumerate()
        .map(|(i, task)| {
            let (ctx, test) = split_context_test(task, n_context, split_seed(seed, i))?;
            let pred = model.predict(&ctx.x, &ctx.y, &test.x)?;
            task_stats(&pred, &test.y, &z)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(merge(&stats, levels))
}

pub fn evaluate_plan<P: Predictor + ?Sized>(
    model: &P,
    set: &TaskSet,
    plan: &SplitPlan,
    levels: &[f64],
    seed: u64,
) -> Result<MetricReport> {
    evaluate(model, &set.tasks, plan.n_context, levels, seed)
}

pub fn test_log_likelihood<P: Predictor + ?Sized>(
    model: &P,
    set: &TaskSet,
    plan: &SplitPlan,
    seed: u64,
) -> Result<f64> {
    Ok(evaluate_plan(model, set, plan, &DEFAULT_LEVELS, seed)?.log_likelihood)
}

pub fn rmse<P: Predictor + ?Sized>(model: &P, set: &TaskSet, plan: &SplitPlan, seed: u64) -> Result<f64> {
    Ok(evaluate_plan(model, set, plan, &DEFAULT_LEVELS, seed)?.rmse)
}

pub fn calibration_error<P: Predictor + ?Sized>(
    model: &P,
    set: &TaskSet,
    plan: &SplitPlan,
    levels: &[f64],
    seed: u64,
) -> Result<f64> {
    Ok(evaluate_plan(model, set, plan, levels, seed)?.calibration_error)
}
