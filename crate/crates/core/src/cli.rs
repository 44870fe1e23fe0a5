//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::certify::CertParams;
use crate::error::{Error, Result};
use crate::qcrs::{linspace, QcrsParams};
use crate::report::default_thresholds;
use crate::runner::{default_search_region, report_from_records, run, run_curves, run_diagnose, CurveConfig, Mode, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "certsmooth", version, about = "Randomized-smoothing certification with per-input sigma search")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Certify every point at a fixed sigma.
    Certify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        sigma: f64,
    },
    /// Search sigma per point, then certify at the chosen sigma.
    Optimize {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        search: Search,
    },
    /// Grid-search sigma per point, then certify at the best grid sigma.
    Grid {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        search: Search,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Sample sigma-radius curves (one CSV per point).
    Curve {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        search: Search,
        #[command(flatten)]
        grid: GridArgs,
        /// Use closed-form smoothed probabilities.
        #[arg(long)]
        exact: bool,
    },
    /// Screen curves for quasiconcavity and concavity.
    Diagnose {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        search: Search,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        exact: bool,
    },
    /// Aggregate an existing records file.
    Report {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// Model configuration (JSON).
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset (JSONL).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.001)]
    pub alpha: f64,
    #[arg(long, default_value_t = 100)]
    pub n0: u64,
    #[arg(long, default_value_t = 100_000)]
    pub n: u64,
    #[arg(long, env = "CERTSMOOTH_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (defaults to the available parallelism).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Radius thresholds for the certified-accuracy table.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct Search {
    /// The model's default sigma.
    #[arg(long, default_value_t = 0.25)]
    pub sigma: f64,
    #[arg(long)]
    pub sigma_min: Option<f64>,
    #[arg(long)]
    pub sigma_max: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0.05)]
    pub tau: f64,
    #[arg(long, default_value_t = 500)]
    pub grad_samples: u64,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Explicit sigma list; overrides the evenly spaced grid.
    #[arg(long, value_delimiter = ',')]
    pub sigmas: Option<Vec<f64>>,
    #[arg(long, default_value_t = 24)]
    pub grid_points: usize,
}

impl Common {
    fn cert(&self) -> CertParams {
        CertParams {
            alpha: self.alpha,
            n0: self.n0,
            n: self.n,
            seed: self.seed,
        }
    }

    fn workers(&self) -> usize {
        self.workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    fn run_config(&self, mode: Mode, qcrs: QcrsParams) -> RunConfig {
        RunConfig {
            dataset: self.data.clone(),
            model: self.model.clone(),
            mode,
            cert: self.cert(),
            qcrs,
            out_dir: self.out.clone(),
            workers: self.workers(),
            thresholds: self.thresholds.clone().unwrap_or_else(default_thresholds),
        }
    }
}

impl Search {
    fn params(&self, seed: u64) -> QcrsParams {
        let (lo, hi) = default_search_region(self.sigma);
        QcrsParams {
            sigma_min: self.sigma_min.unwrap_or(lo),
            sigma_max: self.sigma_max.unwrap_or(hi),
            epsilon: self.epsilon,
            tau: self.tau,
            grad_samples: self.grad_samples,
            sigma0: self.sigma,
            seed,
        }
    }
}

impl GridArgs {
    fn sigmas(&self, params: &QcrsParams) -> Vec<f64> {
        self.sigmas
            .clone()
            .unwrap_or_else(|| linspace(params.sigma_min, params.sigma_max, self.grid_points))
    }
}

fn curve_config(common: &Common, search: &Search, grid: &GridArgs, exact: bool) -> CurveConfig {
    let params = search.params(common.seed);
    CurveConfig {
        dataset: common.data.clone(),
        model: common.model.clone(),
        sigmas: grid.sigmas(&params),
        exact,
        n: common.n,
        alpha: common.alpha,
        seed: common.seed,
        tau: search.tau,
        grad_samples: search.grad_samples,
        out_dir: common.out.clone(),
        workers: common.workers(),
    }
}

/// Executes a parsed command, printing a short JSON summary to stdout.
pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Certify { common, sigma } => {
            let cfg = common.run_config(Mode::FixedSigma { sigma }, QcrsParams::default());
            print_json(&run(&cfg)?)
        }
        Command::Optimize { common, search } => {
            let cfg = common.run_config(Mode::Qcrs, search.params(common.seed));
            print_json(&run(&cfg)?)
        }
        Command::Grid { common, search, grid } => {
            let params = search.params(common.seed);
            let cfg = common.run_config(
                Mode::Grid {
                    sigmas: grid.sigmas(&params),
                },
                params,
            );
            print_json(&run(&cfg)?)
        }
        Command::Curve {
            common,
            search,
            grid,
            exact,
        } => {
            let n = run_curves(&curve_config(&common, &search, &grid, exact))?;
            println!("{{\"curves\": {n}}}");
            Ok(())
        }
        Command::Diagnose {
            common,
            search,
            grid,
            exact,
        } => {
            let lines = run_diagnose(&curve_config(&common, &search, &grid, exact))?;
            let qc = lines.iter().filter(|l| l.report.quasiconcave).count();
            let concave = lines.iter().filter(|l| l.report.concave).count();
            println!(
                "{{\"points\": {}, \"quasiconcave_not_refuted\": {qc}, \"concave\": {concave}}}",
                lines.len()
            );
            Ok(())
        }
        Command::Report {
            records,
            out,
            thresholds,
        } => {
            let thresholds = thresholds.unwrap_or_else(default_thresholds);
            print_json(&report_from_records(&records, &thresholds, &out)?)
        }
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        Error::Data { .. } | Error::DimensionMismatch { .. } => EXIT_DATA,
        _ => EXIT_FAILURE,
    }
}
