//! Synthetic meta-datasets, a CSV task loader and context/test splitting.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::write_atomic;
use crate::error::{Error, Result};
use crate::numerics::{chol_psd, Matrix};

/// Hex SHA-256 of a value's JSON encoding.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let json = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&json)))
}

/// RNG for task `index` of a set seeded with `seed`: same key, separate stream,
/// so a task's draws do not depend on how many tasks precede it.
pub fn task_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub x: Matrix,
    pub y: Matrix,
    #[serde(default)]
    pub function_id: Option<u64>,
}

impl Task {
    pub fn new(x: Matrix, y: Matrix) -> Result<Self> {
        if x.rows() != y.rows() {
            return Err(Error::dims(format!("task X {:?} vs Y {:?}", x.shape(), y.shape())));
        }
        Ok(Self {
            x,
            y,
            function_id: None,
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Task {
        Task {
            x: self.x.select_rows(idx),
            y: self.y.select_rows(idx),
            function_id: self.function_id,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSet {
    pub tasks: Vec<Task>,
    pub provenance: Provenance,
}

impl TaskSet {
    pub fn new(tasks: Vec<Task>, provenance: Provenance) -> Result<Self> {
        let set = Self { tasks, provenance };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.tasks.first() else {
            return Ok(());
        };
        let (n_x, n_y) = (first.x.cols(), first.y.cols());
        for (i, t) in self.tasks.iter().enumerate() {
            if t.x.cols() != n_x || t.y.cols() != n_y || t.x.rows() != t.y.rows() {
                return Err(Error::dims(format!(
                    "task {i}: X {:?}, Y {:?}; expected {n_x} inputs and {n_y} outputs",
                    t.x.shape(),
                    t.y.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn n_inputs(&self) -> usize {
        self.tasks.first().map_or(0, |t| t.x.cols())
    }

    pub fn n_outputs(&self) -> usize {
        self.tasks.first().map_or(0, |t| t.y.cols())
    }
}

/// A scalar distribution from the sinusoid parameter table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dist {
    Constant(f64),
    Normal { mean: f64, std: f64 },
    Uniform { low: f64, high: f64 },
}

impl Dist {
    pub fn validate(&self, what: &str) -> Result<()> {
        let ok = match *self {
            Dist::Constant(v) => v.is_finite(),
            Dist::Normal { mean, std } => mean.is_finite() && std.is_finite() && std >= 0.0,
            Dist::Uniform { low, high } => low.is_finite() && high.is_finite() && low < high,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "invalid distribution for {what}: {self:?}"
            )))
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            Dist::Constant(v) => v,
            Dist::Normal { mean, std } => Normal::new(mean, std).expect("validated").sample(rng),
            Dist::Uniform { low, high } => Uniform::new(low, high).expect("validated").sample(rng),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Dist::Constant(v) => v,
            Dist::Normal { mean, .. } => mean,
            Dist::Uniform { low, high } => 0.5 * (low + high),
        }
    }

    pub fn std(&self) -> f64 {
        match *self {
            Dist::Constant(_) => 0.0,
            Dist::Normal { std, .. } => std,
            Dist::Uniform { low, high } => (high - low) / 12f64.sqrt(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseForm {
    /// `A sin(ω(x - b))`
    #[default]
    Appendix,
    /// `A sin(ωx + b)`
    Body,
}

/// `y = kx + A sin(ω(x - b)) + c + ε` with per-task `(k, A, ω, b, c)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinusoidConfig {
    pub k: Dist,
    pub amplitude: Dist,
    pub omega: Dist,
    pub phase: Dist,
    pub offset: Dist,
    pub noise: Dist,
    pub x_range: (f64, f64),
    #[serde(default)]
    pub phase_form: PhaseForm,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SinusoidParams {
    pub k: f64,
    pub amplitude: f64,
    pub omega: f64,
    pub phase: f64,
    pub offset: f64,
}

impl SinusoidConfig {
    pub fn easy() -> Self {
        Self {
            k: Dist::Normal { mean: 0.5, std: 0.2 },
            amplitude: Dist::Uniform { low: 0.7, high: 1.3 },
            omega: Dist::Constant(1.5),
            phase: Dist::Normal { mean: 0.1, std: 0.1 },
            offset: Dist::Normal { mean: 5.0, std: 0.1 },
            noise: Dist::Normal { mean: 0.0, std: 0.1 },
            x_range: (-5.0, 5.0),
            phase_form: PhaseForm::Appendix,
        }
    }

    pub fn hard() -> Self {
        Self {
            k: Dist::Normal { mean: 0.5, std: 0.6 },
            amplitude: Dist::Uniform { low: 0.7, high: 1.4 },
            omega: Dist::Uniform { low: 1.0, high: 2.0 },
            phase: Dist::Normal { mean: 0.0, std: 2.0 },
            offset: Dist::Normal { mean: 5.0, std: 0.8 },
            noise: Dist::Normal { mean: 0.0, std: 0.2 },
            x_range: (-5.0, 5.0),
            phase_form: PhaseForm::Appendix,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.k.validate("k")?;
        self.amplitude.validate("A")?;
        self.omega.validate("omega")?;
        self.phase.validate("b")?;
        self.offset.validate("c")?;
        self.noise.validate("noise")?;
        let amp_positive = match self.amplitude {
            Dist::Constant(v) => v > 0.0,
            Dist::Uniform { low, .. } => low > 0.0,
            Dist::Normal { .. } => false,
        };
        if !amp_positive {
            return Err(Error::InvalidConfig("amplitude range must be positive".into()));
        }
        if self.noise.mean() != 0.0 {
            return Err(Error::InvalidConfig("noise must be zero-mean".into()));
        }
        let (lo, hi) = self.x_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidConfig(format!("x range {:?}", self.x_range)));
        }
        Ok(())
    }

    fn sample_params(&self, rng: &mut impl Rng) -> SinusoidParams {
        SinusoidParams {
            k: self.k.sample(rng),
            amplitude: self.amplitude.sample(rng),
            omega: self.omega.sample(rng),
            phase: self.phase.sample(rng),
            offset: self.offset.sample(rng),
        }
    }

    /// Noise-free function value.
    pub fn eval(&self, p: &SinusoidParams, x: f64) -> f64 {
        let arg = match self.phase_form {
            PhaseForm::Appendix => p.omega * (x - p.phase),
            PhaseForm::Body => p.omega * x + p.phase,
        };
        p.k * x + p.amplitude * arg.sin() + p.offset
    }

    /// Function parameters of task `id` in a set generated with `seed`.
    pub fn task_params(&self, seed: u64, id: u64) -> SinusoidParams {
        self.sample_params(&mut task_rng(seed, id))
    }
}

pub fn generate_sinusoid(cfg: &SinusoidConfig, n_tasks: usize, n_samples: usize, seed: u64) -> Result<TaskSet> {
    cfg.validate()?;
    if n_tasks == 0 || n_samples == 0 {
        return Err(Error::InvalidConfig("need at least one task and one sample".into()));
    }
    let xs = Uniform::new(cfg.x_range.0, cfg.x_range.1).expect("validated");
    let tasks = (0..n_tasks as u64)
        .into_par_iter()
        .map(|id| {
            let mut rng = task_rng(seed, id);
            let p = cfg.sample_params(&mut rng);
            let mut x = Vec::with_capacity(n_samples);
            let mut y = Vec::with_capacity(n_samples);
            for _ in 0..n_samples {
                let xi = xs.sample(&mut rng);
                x.push(xi);
                y.push(cfg.eval(&p, xi) + cfg.noise.sample(&mut rng));
            }
            Task {
                x: Matrix::column(&x),
                y: Matrix::column(&y),
                function_id: Some(id),
            }
        })
        .collect();
    TaskSet::new(
        tasks,
        Provenance {
            generator: "sinusoid".into(),
            seed,
            config_hash: config_hash(cfg)?,
        },
    )
}

/// Shared two-bump mean plus a per-task SE-kernel GP draw plus noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CauchyConfig {
    pub weights: [f64; 2],
    pub centers: [f64; 2],
    pub widths: [f64; 2],
    pub lengthscale: f64,
    /// Standard deviation of the per-task GP component.
    pub task_scale: f64,
    pub noise_std: f64,
    pub x_range: (f64, f64),
}

impl Default for CauchyConfig {
    fn default() -> Self {
        Self {
            weights: [2.0, 2.0],
            centers: [-2.0, 2.0],
            widths: [1.0, 1.0],
            lengthscale: 1.0,
            task_scale: 0.5,
            noise_std: 0.1,
            x_range: (-6.0, 6.0),
        }
    }
}

impl CauchyConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.x_range;
        let ok = self.widths.iter().all(|&s| s > 0.0)
            && self.lengthscale > 0.0
            && self.task_scale >= 0.0
            && self.noise_std >= 0.0
            && lo < hi
            && [self.weights, self.centers].iter().flatten().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid Cauchy config {self:?}")))
        }
    }

    pub fn shared_mean(&self, x: f64) -> f64 {
        (0..2)
            .map(|i| {
                let d = x - self.centers[i];
                self.weights[i] * (-d * d / (2.0 * self.widths[i] * self.widths[i])).exp()
            })
            .sum()
    }

    /// One joint draw of the zero-mean GP component at `xs`.
    pub fn sample_gp(&self, xs: &[f64], rng: &mut impl Rng) -> Result<Vec<f64>> {
        let n = xs.len();
        if self.task_scale == 0.0 || n == 0 {
            return Ok(vec![0.0; n]);
        }
        let s2 = self.task_scale * self.task_scale;
        let l2 = self.lengthscale * self.lengthscale;
        let k = Matrix::from_fn(n, n, |i, j| {
            let d = xs[i] - xs[j];
            s2 * (-d * d / (2.0 * l2)).exp()
        });
        // Near-duplicate inputs make the SE gram singular; allow the ladder.
        let f = chol_psd(&k, 1e-4 * s2)?;
        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
        let z: Vec<f64> = (0..n).map(|_| std_normal.sample(rng)).collect();
        Ok(f.lower().matmul(&Matrix::column(&z)).into_vec())
    }
}

pub fn generate_cauchy(cfg: &CauchyConfig, n_tasks: usize, n_samples: usize, seed: u64) -> Result<TaskSet> {
    cfg.validate()?;
    if n_tasks == 0 || n_samples == 0 {
        return Err(Error::InvalidConfig("need at least one task and one sample".into()));
    }
    let xs = Uniform::new(cfg.x_range.0, cfg.x_range.1).expect("validated");
    let tasks = (0..n_tasks as u64)
        .into_par_iter()
        .map(|id| {
            let mut rng = task_rng(seed, id);
            let x: Vec<f64> = (0..n_samples).map(|_| xs.sample(&mut rng)).collect();
            let gp = cfg.sample_gp(&x, &mut rng)?;
            let noise = Normal::new(0.0, cfg.noise_std).expect("validated");
            let y: Vec<f64> = x
                .iter()
                .zip(&gp)
                .map(|(&xi, &fi)| cfg.shared_mean(xi) + fi + noise.sample(&mut rng))
                .collect();
            Ok(Task {
                x: Matrix::column(&x),
                y: Matrix::column(&y),
                function_id: Some(id),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    TaskSet::new(
        tasks,
        Provenance {
            generator: "cauchy".into(),
            seed,
            config_hash: config_hash(cfg)?,
        },
    )
}

/// Column names of a task CSV file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub task_id: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl CsvSchema {
    /// `task_id, x0..x{n_x-1}, y0..y{n_y-1}`.
    pub fn standard(n_x: usize, n_y: usize) -> Self {
        Self {
            task_id: "task_id".into(),
            inputs: (0..n_x).map(|i| format!("x{i}")).collect(),
            outputs: (0..n_y).map(|i| format!("y{i}")).collect(),
        }
    }

    /// Standard schema from a header: every `x<i>` and `y<i>` column in order.
    pub fn infer(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_open_error(path, e))?;
        let headers = rdr.headers()?.clone();
        let numbered = |prefix: char| {
            let mut cols: Vec<(usize, String)> = headers
                .iter()
                .filter_map(|h| {
                    let rest = h.strip_prefix(prefix)?;
                    rest.parse::<usize>().ok().map(|i| (i, h.to_string()))
                })
                .collect();
            cols.sort();
            cols.into_iter().map(|(_, h)| h).collect::<Vec<_>>()
        };
        Ok(Self {
            task_id: "task_id".into(),
            inputs: numbered('x'),
            outputs: numbered('y'),
        })
    }
}

fn csv_open_error(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        },
        _ => Error::Csv(e),
    }
}

/// One task per distinct id in order of first appearance; rows keep file order.
/// `NonNumericCell` rows count data rows from 1, excluding the header.
pub fn load_tasks_csv(path: &Path, schema: &CsvSchema) -> Result<TaskSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(bytes.as_slice());
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::EmptyFile);
    }
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let id_col = col(&schema.task_id)?;
    let in_cols = schema.inputs.iter().map(|c| col(c)).collect::<Result<Vec<_>>>()?;
    let out_cols = schema.outputs.iter().map(|c| col(c)).collect::<Result<Vec<_>>>()?;
    if in_cols.is_empty() || out_cols.is_empty() {
        return Err(Error::InvalidConfig(
            "schema needs at least one input and one output column".into(),
        ));
    }

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, (Vec<f64>, Vec<f64>)> = HashMap::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let parse = |c: usize| -> Result<f64> {
            let cell = record.get(c).unwrap_or("").trim();
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::NonNumericCell {
                    row,
                    col: headers[c].to_string(),
                })
        };
        let id = record.get(id_col).unwrap_or("").trim().to_string();
        let entry = rows.entry(id.clone()).or_insert_with(|| {
            order.push(id);
            (Vec::new(), Vec::new())
        });
        for &c in &in_cols {
            entry.0.push(parse(c)?);
        }
        for &c in &out_cols {
            entry.1.push(parse(c)?);
        }
    }
    if order.is_empty() {
        return Err(Error::EmptyFile);
    }
    let (n_x, n_y) = (in_cols.len(), out_cols.len());
    let tasks = order
        .iter()
        .map(|id| {
            let (x, y) = rows.remove(id).unwrap();
            Task {
                x: Matrix::from_vec(x.len() / n_x, n_x, x),
                y: Matrix::from_vec(y.len() / n_y, n_y, y),
                function_id: None,
            }
        })
        .collect();
    let digest = hex::encode(Sha256::digest(&bytes));
    TaskSet::new(
        tasks,
        Provenance {
            generator: format!("csv:{}", path.display()),
            seed: 0,
            config_hash: digest,
        },
    )
}

/// Writes a task set in the standard schema; task ids are task indices.
pub fn write_tasks_csv(path: &Path, set: &TaskSet) -> Result<()> {
    let schema = CsvSchema::standard(set.n_inputs(), set.n_outputs());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![schema.task_id.clone()];
    header.extend(schema.inputs);
    header.extend(schema.outputs);
    w.write_record(&header)?;
    for (id, task) in set.tasks.iter().enumerate() {
        for i in 0..task.len() {
            let mut rec = vec![id.to_string()];
            rec.extend(task.x.row(i).iter().map(|v| format!("{v:?}")));
            rec.extend(task.y.row(i).iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    write_atomic(path, &bytes)
}

/// Task counts and per-task sample counts for a meta-dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub n_train_tasks: usize,
    pub n_samples_per_train_task: usize,
    pub n_test_tasks: usize,
    pub n_context: usize,
    pub n_test_samples: usize,
}

impl SplitPlan {
    pub fn sinusoid_easy() -> Self {
        Self::of(20, 5, 100, 5, 100)
    }

    pub fn sinusoid_hard() -> Self {
        Self::of(20, 10, 100, 10, 100)
    }

    pub fn cauchy() -> Self {
        Self::of(20, 20, 1000, 20, 100)
    }

    pub fn swissfel() -> Self {
        Self::of(5, 200, 4, 200, 200)
    }

    fn of(
        n_train_tasks: usize,
        n_samples_per_train_task: usize,
        n_test_tasks: usize,
        n_context: usize,
        n_test_samples: usize,
    ) -> Self {
        Self {
            n_train_tasks,
            n_samples_per_train_task,
            n_test_tasks,
            n_context,
            n_test_samples,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [
            self.n_train_tasks,
            self.n_samples_per_train_task,
            self.n_test_tasks,
            self.n_context,
            self.n_test_samples,
        ]
        .contains(&0)
        {
            return Err(Error::InvalidConfig(format!(
                "split plan entries must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn test_task_size(&self) -> usize {
        self.n_context + self.n_test_samples
    }
}

/// Seeded random partition into `n_context` context points and the rest;
/// both parts keep the task's original sample order.
pub fn split_context_test(task: &Task, n_context: usize, seed: u64) -> Result<(Task, Task)> {
    if n_context >= task.len() {
        return Err(Error::NotEnoughSamples {
            requested: n_context + 1,
            available: task.len(),
        });
    }
    let mut idx: Vec<usize> = (0..task.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (ctx, test) = idx.split_at_mut(n_context);
    ctx.sort_unstable();
    test.sort_unstable();
    Ok((task.select(ctx), task.select(test)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn easy_means_hand_value() {
        let cfg = SinusoidConfig::easy();
        let p = SinusoidParams {
            k: 0.5,
            amplitude: 1.0,
            omega: 1.5,
            phase: 0.1,
            offset: 5.0,
        };
        let y = cfg.eval(&p, 0.0);
        assert!((y - 4.850_56).abs() < 1e-5);
        assert_eq!(y, 5.0 + (-0.15f64).sin());
        let body = SinusoidConfig {
            phase_form: PhaseForm::Body,
            ..cfg
        };
        assert_eq!(body.eval(&p, 0.0), 5.0 + 0.1f64.sin());
    }

    #[test]
    fn table_parameters() {
        let e = SinusoidConfig::easy();
        assert_eq!(e.k, Dist::Normal { mean: 0.5, std: 0.2 });
        assert_eq!(e.omega, Dist::Constant(1.5));
        let h = SinusoidConfig::hard();
        assert_eq!(h.omega, Dist::Uniform { low: 1.0, high: 2.0 });
        assert_eq!(h.phase, Dist::Normal { mean: 0.0, std: 2.0 });
    }

    #[test]
    fn generation_is_deterministic_and_prefix_stable() {
        let cfg = SinusoidConfig::hard();
        let a = generate_sinusoid(&cfg, 6, 4, 17).unwrap();
        let b = generate_sinusoid(&cfg, 6, 4, 17).unwrap();
        assert_eq!(a, b);
        let fewer = generate_sinusoid(&cfg, 3, 4, 17).unwrap();
        assert_eq!(fewer.tasks[..], a.tasks[..3]);
        let other = generate_sinusoid(&cfg, 6, 4, 18).unwrap();
        assert_ne!(other.tasks, a.tasks);
        assert!(a
            .tasks
            .iter()
            .all(|t| t.x.as_slice().iter().all(|x| (-5.0..5.0).contains(x))));
    }

    #[test]
    fn recovered_parameters_explain_the_data() {
        let cfg = SinusoidConfig {
            noise: Dist::Constant(0.0),
            ..SinusoidConfig::easy()
        };
        let set = generate_sinusoid(&cfg, 3, 5, 2).unwrap();
        for t in &set.tasks {
            let p = cfg.task_params(2, t.function_id.unwrap());
            for i in 0..5 {
                assert_eq!(t.y[(i, 0)], cfg.eval(&p, t.x[(i, 0)]));
            }
        }
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = SinusoidConfig::easy();
        cfg.amplitude = Dist::Uniform { low: -1.0, high: 1.0 };
        assert!(matches!(generate_sinusoid(&cfg, 1, 1, 0), Err(Error::InvalidConfig(_))));
        assert!(generate_sinusoid(&SinusoidConfig::easy(), 0, 1, 0).is_err());
        let bad = CauchyConfig {
            lengthscale: 0.0,
            ..Default::default()
        };
        assert!(generate_cauchy(&bad, 1, 1, 0).is_err());
    }

    #[test]
    fn cauchy_degenerate_gp() {
        let cfg = CauchyConfig {
            task_scale: 0.0,
            noise_std: 0.0,
            ..Default::default()
        };
        let set = generate_cauchy(&cfg, 3, 6, 4).unwrap();
        for t in &set.tasks {
            for i in 0..6 {
                assert_eq!(t.y[(i, 0)], cfg.shared_mean(t.x[(i, 0)]));
            }
        }
        assert!((cfg.shared_mean(-2.0) - (2.0 + 2.0 * (-8.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn cauchy_tasks_share_the_mean_but_not_the_draw() {
        let cfg = CauchyConfig {
            noise_std: 0.0,
            ..Default::default()
        };
        let set = generate_cauchy(&cfg, 2, 8, 5).unwrap();
        let resid = |t: &Task| -> Vec<f64> { (0..8).map(|i| t.y[(i, 0)] - cfg.shared_mean(t.x[(i, 0)])).collect() };
        assert_ne!(resid(&set.tasks[0]), resid(&set.tasks[1]));
        assert_eq!(set, generate_cauchy(&cfg, 2, 8, 5).unwrap());
    }

    #[test]
    fn cauchy_gp_covariance_matches_kernel() {
        let cfg = CauchyConfig::default();
        let xs = [0.0, 0.8];
        let n = 20000;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let draws: Vec<Vec<f64>> = (0..n).map(|_| cfg.sample_gp(&xs, &mut rng).unwrap()).collect();
        let prod: Vec<f64> = draws.iter().map(|d| d[0] * d[1]).collect();
        let mean = prod.iter().sum::<f64>() / n as f64;
        let var = prod.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        let expected = 0.25 * (-0.32f64).exp();
        assert!((mean - expected).abs() < 3.0 * se, "{mean} vs {expected} (se {se})");
    }

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn csv_loading() {
        let dir = tempfile::tempdir().unwrap();
        let schema = CsvSchema::standard(1, 1);
        let p = write(dir.path(), "a.csv", "task_id,x0,y0\na,1.0,2.0\nb,3,4\na,5,6e-1\n");
        let set = load_tasks_csv(&p, &schema).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.tasks[0].x, Matrix::column(&[1.0, 5.0]));
        assert_eq!(set.tasks[0].y, Matrix::column(&[2.0, 0.6]));
        assert_eq!(set.tasks[1].len(), 1);
        assert_eq!(CsvSchema::infer(&p).unwrap(), schema);

        let empty = write(dir.path(), "e.csv", "task_id,x0,y0\n");
        assert!(matches!(load_tasks_csv(&empty, &schema), Err(Error::EmptyFile)));
        let blank = write(dir.path(), "blank.csv", "");
        assert!(matches!(load_tasks_csv(&blank, &schema), Err(Error::EmptyFile)));

        let bad = write(
            dir.path(),
            "b.csv",
            "task_id,x0,y0\n0,1,1\n0,1,1\n0,1,1\n0,1,1\n0,1,oops\n",
        );
        match load_tasks_csv(&bad, &schema) {
            Err(Error::NonNumericCell { row, col }) => assert_eq!((row, col.as_str()), (5, "y0")),
            other => panic!("{other:?}"),
        }
        let missing = write(dir.path(), "m.csv", "task_id,x0\n0,1\n");
        assert!(matches!(load_tasks_csv(&missing, &schema), Err(Error::MissingColumn(c)) if c == "y0"));
        assert!(matches!(
            load_tasks_csv(&dir.path().join("nope.csv"), &schema),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn csv_export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let set = generate_cauchy(&CauchyConfig::default(), 3, 4, 1).unwrap();
        let p = dir.path().join("out/set.csv");
        write_tasks_csv(&p, &set).unwrap();
        let back = load_tasks_csv(&p, &CsvSchema::standard(1, 1)).unwrap();
        for (a, b) in set.tasks.iter().zip(&back.tasks) {
            assert_eq!((&a.x, &a.y), (&b.x, &b.y));
        }
    }

    #[test]
    fn splits_are_partitions() {
        let set = generate_sinusoid(&SinusoidConfig::easy(), 1, 105, 0).unwrap();
        let task = &set.tasks[0];
        let (c, t) = split_context_test(task, 5, 9).unwrap();
        assert_eq!((c.len(), t.len()), (5, 100));
        let mut all: Vec<u64> =
            c.x.as_slice()
                .iter()
                .chain(t.x.as_slice())
                .map(|v| v.to_bits())
                .collect();
        let mut orig: Vec<u64> = task.x.as_slice().iter().map(|v| v.to_bits()).collect();
        all.sort_unstable();
        orig.sort_unstable();
        assert_eq!(all, orig);
        assert_eq!(split_context_test(task, 5, 9).unwrap(), (c, t));

        let (_, one) = split_context_test(task, 104, 1).unwrap();
        assert_eq!(one.len(), 1);
        assert!(matches!(
            split_context_test(task, 105, 1),
            Err(Error::NotEnoughSamples { .. })
        ));
    }

    #[test]
    fn plan_presets() {
        assert_eq!(SplitPlan::sinusoid_easy().test_task_size(), 105);
        assert_eq!(SplitPlan::swissfel().n_context, 200);
        assert_eq!(SplitPlan::cauchy().n_test_tasks, 1000);
        assert!(SplitPlan {
            n_context: 0,
            ..SplitPlan::cauchy()
        }
        .validate()
        .is_err());
    }
}
