//! Benchmark grid: data generation, training, evaluation and result files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use metabayes::autodiff::write_atomic;
use metabayes::data::{
    config_hash, generate_cauchy, generate_sinusoid, load_tasks_csv, task_rng, CsvSchema, SinusoidConfig, TaskSet,
};
use metabayes::evalmetrics::{evaluate_plan, MetricReport, DEFAULT_LEVELS};
use metabayes::model::{Method, Model, ModelOptions};
use metabayes::objectives::LossSpec;
use metabayes::trainer::{train, OptimHyper, TrainHistory};
use metabayes::{Error, Result};
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DatasetConfig, DatasetSource, ExperimentConfig, SinusoidPreset};

/// Sub-streams of a run seed.
const STREAM_TRAIN_DATA: u64 = 10;
const STREAM_TEST_DATA: u64 = 11;
const STREAM_INIT: u64 = 12;
const STREAM_EVAL: u64 = 13;

pub fn derived_seed(seed: u64, stream: u64) -> u64 {
    task_rng(seed, stream).next_u64()
}

/// Everything that determines one run; its hash identifies the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub dataset: DatasetConfig,
    pub method: Method,
    pub options: ModelOptions,
    pub trainer: OptimHyper,
    pub seed: u64,
}

impl CellSpec {
    pub fn hash(&self) -> Result<String> {
        config_hash(self)
    }

    pub fn slug(&self) -> String {
        let method: String = self
            .method
            .as_str()
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() {
                    c.to_ascii_lowercase()
                } else {
                    '-'
                }
            })
            .collect();
        format!("{}__{}__seed{}", self.dataset.name, method, self.seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: Method,
    pub dataset: String,
    pub seed: u64,
    pub log_likelihood: f64,
    pub rmse: f64,
    pub calibration_error: f64,
    pub runtime_s: f64,
    pub config_hash: String,
    pub checkpoint: Option<PathBuf>,
    pub best_step: usize,
    pub steps_run: usize,
    pub calibration_curve: Vec<(f64, f64)>,
    pub options: ModelOptions,
    pub trainer: OptimHyper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub method: Method,
    pub dataset: String,
    pub seed: u64,
    pub error: String,
    pub diverged: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GridOutcome {
    pub reports: Vec<RunReport>,
    pub failures: Vec<CellFailure>,
}

/// Training and test task sets of a dataset for one run seed.
pub fn load_dataset(ds: &DatasetConfig, seed: u64) -> Result<(TaskSet, TaskSet)> {
    let plan = &ds.split;
    let (train_seed, test_seed) = (
        derived_seed(seed, STREAM_TRAIN_DATA),
        derived_seed(seed, STREAM_TEST_DATA),
    );
    match &ds.source {
        DatasetSource::Sinusoid { preset, config } => {
            let cfg = config.clone().unwrap_or_else(|| match preset {
                SinusoidPreset::Easy => SinusoidConfig::easy(),
                SinusoidPreset::Hard => SinusoidConfig::hard(),
            });
            Ok((
                generate_sinusoid(&cfg, plan.n_train_tasks, plan.n_samples_per_train_task, train_seed)?,
                generate_sinusoid(&cfg, plan.n_test_tasks, plan.test_task_size(), test_seed)?,
            ))
        }
        DatasetSource::Cauchy { config } => Ok((
            generate_cauchy(config, plan.n_train_tasks, plan.n_samples_per_train_task, train_seed)?,
            generate_cauchy(config, plan.n_test_tasks, plan.test_task_size(), test_seed)?,
        )),
        DatasetSource::Csv { train, test, schema } => {
            let schema = match schema {
                Some(s) => s.clone(),
                None => CsvSchema::infer(train)?,
            };
            Ok((load_tasks_csv(train, &schema)?, load_tasks_csv(test, &schema)?))
        }
    }
}

pub fn build_model(spec: &CellSpec, n_x: usize, n_y: usize) -> Result<Model> {
    spec.method
        .build(n_x, n_y, &spec.options, &mut task_rng(spec.seed, STREAM_INIT))
}

pub fn evaluate_model(model: &Model, spec: &CellSpec, test: &TaskSet) -> Result<MetricReport> {
    evaluate_plan(
        model,
        test,
        &spec.dataset.split,
        &DEFAULT_LEVELS,
        derived_seed(spec.seed, STREAM_EVAL),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellRun {
    pub report: RunReport,
    pub model: Model,
    pub history: TrainHistory,
}

/// Train and evaluate one cell. With `out`, the checkpoint and training
/// curve are written under it.
pub fn run_cell(spec: &CellSpec, out: Option<&Path>) -> Result<CellRun> {
    let start = Instant::now();
    let (train_set, test_set) = load_dataset(&spec.dataset, spec.seed)?;
    let model = build_model(spec, train_set.n_inputs(), train_set.n_outputs())?;
    let loss = LossSpec::new(spec.method.loss());
    let outcome = train(
        model,
        &loss,
        &train_set.tasks,
        spec.dataset.split.n_context,
        &spec.trainer,
        spec.seed,
    )?;
    let metrics = evaluate_model(&outcome.model, spec, &test_set)?;
    let config_hash = spec.hash()?;
    let checkpoint = match out {
        Some(dir) => {
            let path = dir.join("checkpoints").join(format!("{}.json", spec.slug()));
            outcome.model.to_checkpoint(spec.seed)?.save(&path)?;
            outcome
                .history
                .write_csv(&dir.join("curves").join(format!("{}.csv", spec.slug())))?;
            Some(path)
        }
        None => None,
    };
    let report = RunReport {
        method: spec.method,
        dataset: spec.dataset.name.clone(),
        seed: spec.seed,
        log_likelihood: metrics.log_likelihood,
        rmse: metrics.rmse,
        calibration_error: metrics.calibration_error,
        runtime_s: start.elapsed().as_secs_f64(),
        config_hash,
        checkpoint,
        best_step: outcome.history.best_step,
        steps_run: outcome.history.steps_run,
        calibration_curve: metrics.calibration_curve,
        options: spec.options.clone(),
        trainer: spec.trainer.clone(),
    };
    if ![report.log_likelihood, report.rmse, report.calibration_error]
        .iter()
        .all(|v| v.is_finite())
    {
        return Err(Error::NonFiniteLoss);
    }
    Ok(CellRun {
        report,
        model: outcome.model,
        history: outcome.history,
    })
}

pub fn cells(cfg: &ExperimentConfig) -> Vec<CellSpec> {
    let mut out = Vec::new();
    for ds in cfg.datasets() {
        for &method in cfg.methods() {
            for &seed in &cfg.seeds {
                out.push(CellSpec {
                    dataset: ds.clone(),
                    method,
                    options: cfg.model.options.clone(),
                    trainer: cfg.trainer.clone(),
                    seed,
                });
            }
        }
    }
    out
}

/// Runs every (dataset, method, seed) cell in parallel; a failing cell is
/// recorded and the rest continue. Output order follows the grid order.
pub fn run_grid(cfg: &ExperimentConfig, out: Option<&Path>, quiet: bool) -> GridOutcome {
    let results: Vec<(CellSpec, Result<CellRun>)> = cells(cfg)
        .into_par_iter()
        .map(|spec| {
            let r = run_cell(&spec, out);
            if !quiet {
                match &r {
                    Ok(run) => eprintln!(
                        "{:<14} {:<13} seed {:<3} ll {:>9.4}  rmse {:.4}  calib {:.4}  ({:.1}s)",
                        spec.dataset.name,
                        spec.method,
                        spec.seed,
                        run.report.log_likelihood,
                        run.report.rmse,
                        run.report.calibration_error,
                        run.report.runtime_s
                    ),
                    Err(e) => eprintln!(
                        "{:<14} {:<13} seed {:<3} failed: {e}",
                        spec.dataset.name, spec.method, spec.seed
                    ),
                }
            }
            (spec, r)
        })
        .collect();
    let mut outcome = GridOutcome::default();
    for (spec, r) in results {
        match r {
            Ok(run) => outcome.reports.push(run.report),
            Err(e) => outcome.failures.push(CellFailure {
                method: spec.method,
                dataset: spec.dataset.name.clone(),
                seed: spec.seed,
                diverged: matches!(e, Error::DivergedLoss { .. }),
                error: e.to_string(),
            }),
        }
    }
    outcome
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub dataset: String,
    pub n_seeds: usize,
    pub ll: f64,
    pub rmse: f64,
    pub calib: f64,
    pub runtime_s: f64,
}

/// Mean over seeds per (dataset, method), in first-appearance order.
pub fn summarize(reports: &[RunReport]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, Method)> = Vec::new();
    for r in reports {
        let k = (r.dataset.clone(), r.method);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(dataset, method)| {
            let rows: Vec<&RunReport> = reports
                .iter()
                .filter(|r| r.dataset == dataset && r.method == method)
                .collect();
            let n = rows.len() as f64;
            let mean = |f: fn(&RunReport) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
            SummaryRow {
                method,
                dataset,
                n_seeds: rows.len(),
                ll: mean(|r| r.log_likelihood),
                rmse: mean(|r| r.rmse),
                calib: mean(|r| r.calibration_error),
                runtime_s: mean(|r| r.runtime_s),
            }
        })
        .collect()
}

pub fn mean_ll(reports: &[RunReport], dataset: &str, method: Method) -> Option<f64> {
    summarize(reports)
        .into_iter()
        .find(|s| s.dataset == dataset && s.method == method)
        .map(|s| s.ll)
}

pub const RESULT_COLUMNS: [&str; 8] = [
    "method",
    "dataset",
    "seed",
    "ll",
    "rmse",
    "calib",
    "runtime_s",
    "config_hash",
];

/// `results.csv`: one row per run, then one `mean` row per (dataset, method).
pub fn results_csv(reports: &[RunReport]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RESULT_COLUMNS)?;
    for r in reports {
        w.write_record([
            r.method.as_str().to_string(),
            r.dataset.clone(),
            r.seed.to_string(),
            r.log_likelihood.to_string(),
            r.rmse.to_string(),
            r.calibration_error.to_string(),
            format!("{:.3}", r.runtime_s),
            r.config_hash.clone(),
        ])?;
    }
    for s in summarize(reports) {
        w.write_record([
            s.method.as_str().to_string(),
            s.dataset.clone(),
            "mean".to_string(),
            s.ll.to_string(),
            s.rmse.to_string(),
            s.calib.to_string(),
            format!("{:.3}", s.runtime_s),
            String::new(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn calibration_csv(reports: &[RunReport]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "dataset", "seed", "q", "f_q"])?;
    for r in reports {
        for (q, f) in &r.calibration_curve {
            w.write_record([
                r.method.as_str().to_string(),
                r.dataset.clone(),
                r.seed.to_string(),
                q.to_string(),
                f.to_string(),
            ])?;
        }
    }
    w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// Writes `results.csv`, `results.json` and `calibration.csv` into `dir`.
pub fn write_results(dir: &Path, outcome: &GridOutcome) -> Result<()> {
    write_atomic(&dir.join("results.csv"), &results_csv(&outcome.reports)?)?;
    write_atomic(&dir.join("calibration.csv"), &calibration_csv(&outcome.reports)?)?;
    let json = serde_json::json!({
        "runs": outcome.reports,
        "summary": summarize(&outcome.reports),
        "failures": outcome.failures,
    });
    write_atomic(
        &dir.join("results.json"),
        serde_json::to_string_pretty(&json)?.as_bytes(),
    )
}

/// Table 2/3 shaped text: one row per method, LL / RMSE / calibration per dataset.
pub fn summary_table(reports: &[RunReport]) -> String {
    let rows = summarize(reports);
    let mut datasets: Vec<&str> = Vec::new();
    let mut methods: Vec<Method> = Vec::new();
    for s in &rows {
        if !datasets.contains(&s.dataset.as_str()) {
            datasets.push(&s.dataset);
        }
        if !methods.contains(&s.method) {
            methods.push(s.method);
        }
    }
    let mut out = String::new();
    let _ = write!(out, "{:<14}", "method");
    for d in &datasets {
        let _ = write!(out, " | {:^28}", d);
    }
    out.push('\n');
    let _ = write!(out, "{:<14}", "");
    for _ in &datasets {
        let _ = write!(out, " | {:>8} {:>9} {:>9}", "LL", "RMSE", "calib");
    }
    out.push('\n');
    for m in methods {
        let _ = write!(out, "{:<14}", m.as_str());
        for d in &datasets {
            match rows.iter().find(|s| s.method == m && s.dataset == *d) {
                Some(s) => {
                    let _ = write!(out, " | {:>8.3} {:>9.3} {:>9.3}", s.ll, s.rmse, s.calib);
                }
                None => {
                    let _ = write!(out, " | {:>28}", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub width: usize,
    pub seed: u64,
    pub nll: f64,
}

/// Trains BLR-PR-FC for each final feature width and reports test NLL.
pub fn width_sweep(
    dataset: &DatasetConfig,
    options: &ModelOptions,
    trainer: &OptimHyper,
    widths: &[usize],
    seeds: &[u64],
    quiet: bool,
) -> Result<Vec<SweepRow>> {
    if widths.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidConfig(
            "width sweep needs at least one width and one seed".into(),
        ));
    }
    if widths.contains(&0) {
        return Err(Error::InvalidConfig("widths must be positive".into()));
    }
    let specs: Vec<CellSpec> = widths
        .iter()
        .flat_map(|&w| {
            seeds.iter().map(move |&seed| CellSpec {
                dataset: dataset.clone(),
                method: Method::BlrPrFc,
                options: ModelOptions {
                    latent_dim: w,
                    ..options.clone()
                },
                trainer: trainer.clone(),
                seed,
            })
        })
        .collect();
    specs
        .into_par_iter()
        .map(|spec| {
            let run = run_cell(&spec, None)?;
            if !quiet {
                eprintln!(
                    "width {:<4} seed {:<3} nll {:.4}",
                    spec.options.latent_dim, spec.seed, -run.report.log_likelihood
                );
            }
            Ok(SweepRow {
                width: spec.options.latent_dim,
                seed: spec.seed,
                nll: -run.report.log_likelihood,
            })
        })
        .collect()
}

/// Mean NLL per width, in the order the widths first appear.
pub fn sweep_means(rows: &[SweepRow]) -> Vec<(usize, f64)> {
    let mut widths: Vec<usize> = Vec::new();
    for r in rows {
        if !widths.contains(&r.width) {
            widths.push(r.width);
        }
    }
    widths
        .into_iter()
        .map(|w| {
            let v: Vec<f64> = rows.iter().filter(|r| r.width == w).map(|r| r.nll).collect();
            (w, v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["width", "seed", "nll"])?;
    for r in rows {
        w.write_record([r.width.to_string(), r.seed.to_string(), r.nll.to_string()])?;
    }
    for (width, nll) in sweep_means(rows) {
        w.write_record([width.to_string(), "mean".to_string(), nll.to_string()])?;
    }
    w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))
}
