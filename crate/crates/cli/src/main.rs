use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use metabayes::autodiff::{write_atomic, Checkpoint};
use metabayes::data::write_tasks_csv;
use metabayes::model::{Method, Model};
use metabayes::{Error, Result};
use metabayes_cli::certify::{self, SizeCaps, VerifyOptions};
use metabayes_cli::config::{DatasetConfig, ExperimentConfig};
use metabayes_cli::runner::{self, CellSpec};
use metabayes_cli::{exit_code, EXIT_CERTIFICATION, EXIT_CONFIG, EXIT_DIVERGED, EXIT_OK};

#[derive(Parser)]
#[command(
    name = "metabayes",
    version,
    about = "Bayesian meta-learning with BLR and GP regression"
)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds; overrides the config.
    #[arg(long, env = "METABAYES_SEED", value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the training and test task sets of every dataset as CSV.
    Generate(Common),
    /// Train every configured cell and save checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        /// Restrict to one method.
        #[arg(long)]
        method: Option<Method>,
    },
    /// Evaluate a checkpoint on a dataset's test tasks.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset name from the config (default: the first).
        #[arg(long)]
        dataset: Option<String>,
    },
    /// Run the three equivalence certification suites.
    Verify {
        #[arg(long, env = "METABAYES_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        instances: usize,
        #[arg(long, default_value_t = 500)]
        chain_instances: usize,
        /// n_phi,n_context,n_test,n_y
        #[arg(long, value_delimiter = ',', default_values_t = [8, 20, 10, 3])]
        caps: Vec<usize>,
        /// Negative control: perturb Lambda0 on the GP side.
        #[arg(long)]
        corrupt_lambda0: bool,
        /// Write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate the full (dataset, method, seed) grid.
    Benchmark(Common),
    /// Test NLL of BLR-PR-FC against the final feature width.
    SweepWidth {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [2, 8, 32, 128])]
        widths: Vec<usize>,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seeds) = &common.seeds {
        cfg.seeds = seeds.clone();
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn pick_dataset<'a>(cfg: &'a ExperimentConfig, name: Option<&str>) -> Result<&'a DatasetConfig> {
    match name {
        None => Ok(&cfg.datasets()[0]),
        Some(n) => cfg
            .datasets()
            .iter()
            .find(|d| d.name == n)
            .ok_or_else(|| Error::InvalidConfig(format!("no dataset named {n}"))),
    }
}

fn generate(common: &Common) -> Result<i32> {
    let cfg = load(common)?;
    for ds in cfg.datasets() {
        for &seed in &cfg.seeds {
            let (train, test) = runner::load_dataset(ds, seed)?;
            for (part, set) in [("train", &train), ("test", &test)] {
                let path = cfg.output_dir.join(format!("{}_seed{}_{}.csv", ds.name, seed, part));
                write_tasks_csv(&path, set)?;
                println!("{}", path.display());
            }
        }
    }
    Ok(EXIT_OK)
}

fn train_cmd(common: &Common, method: Option<Method>, quiet: bool) -> Result<i32> {
    let cfg = load(common)?;
    let mut cells = runner::cells(&cfg);
    if let Some(m) = method {
        cells.retain(|c| c.method == m);
    }
    for spec in cells {
        let run = runner::run_cell(&spec, Some(&cfg.output_dir))?;
        if !quiet {
            eprintln!(
                "{} {} seed {}: best step {} val ll {:.4}",
                spec.dataset.name, spec.method, spec.seed, run.history.best_step, run.history.best_val_ll
            );
        }
        if let Some(p) = &run.report.checkpoint {
            println!("{}", p.display());
        }
    }
    Ok(EXIT_OK)
}

fn eval_cmd(common: &Common, checkpoint: &Path, dataset: Option<&str>) -> Result<i32> {
    let cfg = load(common)?;
    let ds = pick_dataset(&cfg, dataset)?;
    let ck = Checkpoint::load(checkpoint)?;
    let model = Model::from_checkpoint(&ck)?;
    for &seed in &cfg.seeds {
        let spec = CellSpec {
            dataset: ds.clone(),
            method: cfg.methods()[0],
            options: cfg.model.options.clone(),
            trainer: cfg.trainer.clone(),
            seed,
        };
        let (_, test) = runner::load_dataset(ds, seed)?;
        let m = runner::evaluate_model(&model, &spec, &test)?;
        println!(
            "{} seed {}: ll {:.4} rmse {:.4} calib {:.4} ({} tasks, {} points)",
            ds.name, seed, m.log_likelihood, m.rmse, m.calibration_error, m.n_tasks, m.n_points
        );
    }
    Ok(EXIT_OK)
}

fn verify_cmd(opts: VerifyOptions, out: Option<&Path>) -> Result<i32> {
    let report = certify::verify(&opts)?;
    print!("{}", certify::render(&report));
    if let Some(p) = out {
        write_atomic(p, serde_json::to_string_pretty(&report)?.as_bytes())?;
    }
    Ok(if report.passed { EXIT_OK } else { EXIT_CERTIFICATION })
}

fn benchmark(common: &Common, quiet: bool) -> Result<i32> {
    let cfg = load(common)?;
    let out = runner::run_grid(&cfg, Some(&cfg.output_dir), quiet);
    runner::write_results(&cfg.output_dir, &out)?;
    print!("{}", runner::summary_table(&out.reports));
    for f in &out.failures {
        eprintln!("failed: {} {} seed {}: {}", f.dataset, f.method, f.seed, f.error);
    }
    Ok(if out.failures.iter().any(|f| f.diverged) {
        EXIT_DIVERGED
    } else {
        EXIT_OK
    })
}

fn sweep(common: &Common, widths: &[usize], quiet: bool) -> Result<i32> {
    let cfg = load(common)?;
    let ds = pick_dataset(&cfg, None)?;
    let rows = runner::width_sweep(ds, &cfg.model.options, &cfg.trainer, widths, &cfg.seeds, quiet)?;
    write_atomic(&cfg.output_dir.join("width_sweep.csv"), &runner::sweep_csv(&rows)?)?;
    println!("width,mean_nll");
    for (w, nll) in runner::sweep_means(&rows) {
        println!("{w},{nll:.6}");
    }
    Ok(EXIT_OK)
}

fn run(cli: Cli) -> Result<i32> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    }
    match cli.command {
        Command::Generate(c) => generate(&c),
        Command::Train { common, method } => train_cmd(&common, method, cli.quiet),
        Command::Eval {
            common,
            checkpoint,
            dataset,
        } => eval_cmd(&common, &checkpoint, dataset.as_deref()),
        Command::Verify {
            seed,
            instances,
            chain_instances,
            caps,
            corrupt_lambda0,
            out,
        } => {
            if caps.len() != 4 {
                return Err(Error::InvalidConfig(format!(
                    "--caps takes 4 values, got {}",
                    caps.len()
                )));
            }
            let opts = VerifyOptions {
                seed,
                instances,
                chain_instances,
                caps: SizeCaps {
                    n_phi: caps[0],
                    n_context: caps[1],
                    n_test: caps[2],
                    n_y: caps[3],
                },
                corrupt_lambda0,
            };
            verify_cmd(opts, out.as_deref())
        }
        Command::Benchmark(c) => benchmark(&c, cli.quiet),
        Command::SweepWidth { common, widths } => sweep(&common, &widths, cli.quiet),
    }
}

fn main() -> ExitCode {
    // Usage errors are config errors (exit 1); clap would use 2.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                EXIT_CONFIG as u8
            } else {
                EXIT_OK as u8
            });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
