use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use maxqnorm::completion::{complete_with_cv, estimate_max_qnorm, CvOptions};
use maxqnorm::experiment::{
    run_grid, run_norm_experiment, write_grid_csv, write_norm_csv, write_summary_csv, GridConfig,
    NormExperimentConfig,
};
use maxqnorm::io::{read_observations, read_tns, write_tns};
use maxqnorm::{Method, Shape, SolverParams};
use serde_json::json;

#[derive(Parser)]
#[command(name = "maxqnorm", version, about = "Max-qnorm constrained tensor completion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Complete a tensor from an observation CSV with cross-validated bound search.
    Complete {
        #[arg(long)]
        obs: PathBuf,
        /// Comma-separated dimensions, e.g. 20,20,20.
        #[arg(long, value_delimiter = ',', required = true)]
        shape: Vec<usize>,
        #[arg(long)]
        lower: f64,
        #[arg(long)]
        upper: f64,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value = "pqn")]
        solver: Method,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        max_iters: Option<usize>,
        /// Factor width (default: twice the largest dimension).
        #[arg(long)]
        width: Option<usize>,
        /// Optional ground truth; adds `relative_error` to the diagnostics.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the max-qnorm of a fully observed tensor by bisection.
    Maxqnorm {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        lower: f64,
        #[arg(long)]
        upper: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a recovery-error grid from a JSON config.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-cell means (default: `<out stem>.summary.csv`).
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Worker threads; 0 uses all cores.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Estimate max-qnorms of random low-rank tensors from a JSON config.
    NormExperiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
}

enum Failure {
    Input(String),
    Internal(String),
}

type Outcome = Result<(), Failure>;

fn input<E: std::fmt::Display>(context: &str) -> impl FnOnce(E) -> Failure + '_ {
    move |e| Failure::Input(format!("{context}: {e}"))
}

fn internal<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Internal(e.to_string())
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(input(&path.display().to_string()))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(input(&path.display().to_string()))
}

fn check_bounds(lower: f64, upper: f64, strict: bool) -> Outcome {
    let ordered = if strict { lower < upper } else { lower <= upper };
    if lower > 0.0 && upper.is_finite() && ordered {
        Ok(())
    } else {
        let rel = if strict { "<" } else { "<=" };
        Err(Failure::Input(format!("need 0 < lower {rel} upper, got [{lower}, {upper}]")))
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    serde_json::from_reader(open(path)?).map_err(input(&path.display().to_string()))
}

fn summary_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.summary.csv"))
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Complete {
            obs,
            shape,
            lower,
            upper,
            alpha,
            solver,
            seed,
            max_iters,
            width,
            truth,
            out,
        } => {
            let shape = Shape::new(shape).map_err(input("--shape"))?;
            check_bounds(lower, upper, false)?;
            if !(alpha > 0.0) {
                return Err(Failure::Input("--alpha must be positive".into()));
            }
            if width == Some(0) {
                return Err(Failure::Input("--width must be positive".into()));
            }
            let observations = read_observations(open(&obs)?, &shape, 0.0).map_err(input(&obs.display().to_string()))?;
            if observations.len() < 5 {
                return Err(Failure::Input("need at least 5 observations".into()));
            }
            let truth = match truth {
                Some(p) => {
                    let t = read_tns(open(&p)?).map_err(input(&p.display().to_string()))?;
                    if t.shape() != &shape {
                        return Err(Failure::Input("--truth shape differs from --shape".into()));
                    }
                    Some(t)
                }
                None => None,
            };
            let mut params = SolverParams { method: solver, ..SolverParams::default() };
            if let Some(n) = max_iters {
                params.max_iters = n;
            }
            params.validate().map_err(input("solver"))?;
            let options = CvOptions { width, seed, ..CvOptions::default() };
            let mut res = complete_with_cv(&observations, &shape, lower, upper, &params, alpha, &options)
                .map_err(internal)?;
            if let Some(t) = &truth {
                res.score(t).map_err(internal)?;
            }
            let mut w = create(&out)?;
            write_tns(&res.recovered, &mut w).map_err(internal)?;
            w.flush().map_err(internal)?;
            let report = json!({
                "chosen_R": res.chosen_r,
                "validation_rmse": res.validation_rmse,
                "iterations": res.solver.total_iters,
                "final_iterations": res.solver.iter,
                "solves": res.solver.solves,
                "train_loss": res.solver.loss,
                "relative_error": res.relative_error,
            });
            println!("{report}");
            Ok(())
        }
        Command::Maxqnorm { input: path, lower, upper, seed } => {
            check_bounds(lower, upper, true)?;
            let t = read_tns(open(&path)?).map_err(input(&path.display().to_string()))?;
            let params = SolverParams { seed, ..SolverParams::default() };
            let est = estimate_max_qnorm(&t, lower, upper, &params).map_err(internal)?;
            println!(
                "{}",
                json!({
                    "estimate": est.value,
                    "resolution": est.resolution,
                    "iterations": est.iterations,
                })
            );
            Ok(())
        }
        Command::Grid { config, out, summary, jobs } => {
            let cfg: GridConfig = read_json(&config)?;
            cfg.validate().map_err(input("config"))?;
            let mut w = create(&out)?;
            let summary = summary.unwrap_or_else(|| summary_path(&out));
            let mut s = create(&summary)?;
            let rows = run_grid(&cfg, jobs).map_err(internal)?;
            write_grid_csv(&rows, &mut w).map_err(internal)?;
            write_summary_csv(&rows, &mut s).map_err(internal)?;
            w.flush().map_err(internal)?;
            s.flush().map_err(internal)?;
            Ok(())
        }
        Command::NormExperiment { config, out, jobs } => {
            let cfg: NormExperimentConfig = read_json(&config)?;
            cfg.validate().map_err(input("config"))?;
            let mut w = create(&out)?;
            let rows = run_norm_experiment(&cfg, jobs).map_err(internal)?;
            write_norm_csv(&rows, &mut w).map_err(internal)?;
            w.flush().map_err(internal)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(1)
        }
    }
}
