//! AdamW and the meta-training loop with validation-based model selection.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::data::{task_rng, Task};
use crate::error::{Error, Result};
use crate::evalmetrics::{evaluate, DEFAULT_LEVELS};
use crate::model::Model;
use crate::objectives::{check_compatible, loss_and_grad, BatchTask, LossSpec, TaskBatch};

/// Consecutive non-finite steps tolerated before giving up.
pub const MAX_NONFINITE_STEPS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimHyper {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_steps: usize,
    pub tasks_per_batch: usize,
    pub eval_every: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    /// Share of the training tasks held out for model selection.
    pub validation_fraction: f64,
}

impl Default for OptimHyper {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_steps: 20_000,
            tasks_per_batch: 4,
            eval_every: 250,
            patience: 12,
            validation_fraction: 0.2,
        }
    }
}

impl OptimHyper {
    /// `learning_rate = 0` is accepted so a run can be a no-op baseline.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("optimizer: {m}")));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be >= 0");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be >= 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad("epsilon must be > 0");
        }
        if self.tasks_per_batch == 0 || self.eval_every == 0 {
            return bad("tasks_per_batch and eval_every must be positive");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

/// First and second moment estimates, flattened in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let n = params.num_scalars();
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One AdamW update with decoupled weight decay. Frozen tensors are skipped
/// entirely. Nothing is modified when a gradient entry is non-finite.
pub fn adamw_step(
    params: &mut ParamStore,
    state: &mut AdamState,
    grads: &ParamStore,
    hyper: &OptimHyper,
) -> Result<()> {
    if grads.num_scalars() != params.num_scalars() || state.m.len() != params.num_scalars() {
        return Err(Error::dims(
            "optimizer state and gradients must share the parameter layout",
        ));
    }
    if !grads.is_finite() {
        return Err(Error::NonFiniteGradient);
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    let (lr, wd) = (hyper.learning_rate, hyper.weight_decay);
    let mut offset = 0;
    for ((name, p), (gname, g)) in params.iter_mut().zip(grads.iter()) {
        if name != gname || p.value.shape() != g.value.shape() {
            return Err(Error::dims(format!("gradient layout mismatch at {name}")));
        }
        let n = g.value.as_slice().len();
        if !p.frozen {
            let ms = &mut state.m[offset..offset + n];
            let vs = &mut state.v[offset..offset + n];
            for (((th, &gi), m), v) in p
                .value
                .as_mut_slice()
                .iter_mut()
                .zip(g.value.as_slice())
                .zip(ms)
                .zip(vs)
            {
                *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * gi;
                *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * gi * gi;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *th -= lr * m_hat / (v_hat.sqrt() + hyper.epsilon) + lr * wd * *th;
            }
        }
        offset += n;
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    /// Mean batch loss over the steps since the previous evaluation.
    pub train_loss: f64,
    pub val_ll: f64,
    pub wall_time: f64,
}

/// Wall time is excluded so repeated runs compare equal.
impl PartialEq for EvalRecord {
    fn eq(&self, other: &Self) -> bool {
        self.step == other.step
            && self.train_loss.to_bits() == other.train_loss.to_bits()
            && self.val_ll.to_bits() == other.val_ll.to_bits()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EvalRecord>,
    pub best_step: usize,
    pub best_val_ll: f64,
    pub steps_run: usize,
    pub stopped_early: bool,
    pub n_train_tasks: usize,
    pub n_validation_tasks: usize,
}

impl TrainHistory {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["step", "train_loss", "val_ll", "wall_time"])?;
        for r in &self.records {
            w.write_record([
                r.step.to_string(),
                r.train_loss.to_string(),
                r.val_ll.to_string(),
                format!("{:.6}", r.wall_time),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
        crate::autodiff::write_atomic(path, &bytes)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// The model at the best validation evaluation.
    pub model: Model,
    pub history: TrainHistory,
}

/// Split task indices into (train, validation). With fewer than three tasks
/// there is nothing to hold out and validation reuses the training tasks.
pub fn holdout_split(n_tasks: usize, fraction: f64, rng: &mut impl Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n_tasks).collect();
    if n_tasks < 3 || fraction == 0.0 {
        return (idx.clone(), idx);
    }
    idx.shuffle(rng);
    let n_val = ((fraction * n_tasks as f64).round() as usize).clamp(2, n_tasks - 1);
    let (val, train) = idx.split_at(n_val);
    let (mut train, mut val) = (train.to_vec(), val.to_vec());
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn sample_batch(tasks: &[Task], pool: &[usize], spec: &LossSpec, size: usize, rng: &mut impl Rng) -> TaskBatch {
    let tasks = (0..size)
        .map(|_| {
            let task = &tasks[pool[rng.random_range(0..pool.len())]];
            let mut order: Vec<usize> = (0..task.len()).collect();
            order.shuffle(rng);
            let t = spec.sample_horizon(task.len(), rng);
            let picked = task.select(&order);
            BatchTask {
                x: picked.x,
                y: picked.y,
                t,
            }
        })
        .collect();
    TaskBatch { tasks }
}

fn validation_ll(model: &Model, tasks: &[Task], n_context: usize, seed: u64) -> Result<f64> {
    match evaluate(model, tasks, n_context, &DEFAULT_LEVELS, seed) {
        Ok(r) if r.log_likelihood.is_finite() => Ok(r.log_likelihood),
        Ok(_) | Err(Error::NotPositiveDefinite) => Ok(f64::NEG_INFINITY),
        Err(e) => Err(e),
    }
}

/// Meta-train `model` on `tasks`. Each validation task is conditioned on
/// `min(n_context, len / 2)` of its samples and scored on the rest.
pub fn train(
    mut model: Model,
    spec: &LossSpec,
    tasks: &[Task],
    n_context: usize,
    hyper: &OptimHyper,
    seed: u64,
) -> Result<TrainOutcome> {
    hyper.validate()?;
    check_compatible(spec.kind, &model)?;
    if tasks.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if let Some(t) = tasks.iter().find(|t| t.len() < 2) {
        return Err(Error::NotEnoughSamples {
            requested: 2,
            available: t.len(),
        });
    }
    let (train_idx, val_idx) = holdout_split(tasks.len(), hyper.validation_fraction, &mut task_rng(seed, 0));
    let val_tasks: Vec<Task> = val_idx.iter().map(|&i| tasks[i].clone()).collect();
    let val_context = val_tasks
        .iter()
        .map(|t| t.len() / 2)
        .min()
        .unwrap_or(0)
        .min(n_context)
        .max(1);
    let mut rng = task_rng(seed, 1);
    let mut state = AdamState::new(model.params());
    let start = Instant::now();

    let mut records = Vec::new();
    let mut best = (f64::NEG_INFINITY, 0usize, model.params().clone());
    let mut since_best = 0;
    let mut window = (0.0, 0usize);
    let mut nonfinite = 0;
    let mut stopped_early = false;
    let mut step = 0;

    loop {
        let batch = sample_batch(tasks, &train_idx, spec, hyper.tasks_per_batch, &mut rng);
        let step_result = loss_and_grad(spec, &model, model.params(), &batch);
        let (loss, grads) = match step_result {
            Ok(r) => (r.0, Some(r.1)),
            Err(Error::NotPositiveDefinite) => (f64::NAN, None),
            Err(e) => return Err(e),
        };
        if loss.is_finite() {
            window.0 += loss;
            window.1 += 1;
        }

        let last = step == hyper.max_steps;
        if step % hyper.eval_every == 0 || last {
            let val_ll = validation_ll(&model, &val_tasks, val_context, seed)?;
            records.push(EvalRecord {
                step,
                train_loss: if window.1 > 0 {
                    window.0 / window.1 as f64
                } else {
                    f64::NAN
                },
                val_ll,
                wall_time: start.elapsed().as_secs_f64(),
            });
            window = (0.0, 0);
            if val_ll > best.0 || records.len() == 1 {
                best = (val_ll, step, model.params().clone());
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= hyper.patience && !last {
                    stopped_early = true;
                    break;
                }
            }
        }
        if last {
            break;
        }

        let applied = match (&grads, loss.is_finite()) {
            (Some(g), true) => match adamw_step(model.params_mut(), &mut state, g, hyper) {
                Ok(()) => true,
                Err(Error::NonFiniteGradient) => false,
                Err(e) => return Err(e),
            },
            _ => false,
        };
        if applied {
            nonfinite = 0;
        } else {
            nonfinite += 1;
            if nonfinite >= MAX_NONFINITE_STEPS {
                return Err(Error::DivergedLoss { step });
            }
        }
        step += 1;
    }

    let (best_val_ll, best_step, best_params) = best;
    *model.params_mut() = best_params;
    Ok(TrainOutcome {
        model,
        history: TrainHistory {
            records,
            best_step,
            best_val_ll,
            steps_run: step,
            stopped_early,
            n_train_tasks: train_idx.len(),
            n_validation_tasks: val_idx.len(),
        },
    })
}
