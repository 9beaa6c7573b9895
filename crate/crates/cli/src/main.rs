//! `matchtu`: solve, identify, fit and simulate separable TU matching markets
//! from CSV files.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use config::{Paths, RunConfig, SimMode};
use error::{CliError, Result};

#[derive(Parser, Debug)]
#[command(name = "matchtu", version, about = "Transferable-utility matching markets with logit heterogeneity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Equilibrium matching for a surplus and margins.
    Solve(Overrides),
    /// Surplus and its split recovered from observed counts.
    Identify(Overrides),
    /// Fit surplus coefficients to household counts.
    Fit(Overrides),
    /// Standard errors for fitted estimates.
    Se(Overrides),
    /// Synthetic household counts.
    Simulate(Overrides),
}

#[derive(Args, Debug)]
struct Overrides {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Equilibrium solver: ipfp or gradient.
    #[arg(long)]
    algorithm: Option<String>,
    /// gradient, coordinate-hybrid, mle or max-score.
    #[arg(long)]
    estimator: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Households added to each category; 0.5 when given without a value.
    #[arg(long, num_args = 0..=1, default_missing_value = "0.5")]
    pseudo_count: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<SimMode>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = &self.out {
            cfg.output_dir = Some(v.clone());
        }
        cfg.tol = self.tol.or(cfg.tol);
        cfg.max_iter = self.max_iter.or(cfg.max_iter);
        if let Some(v) = &self.algorithm {
            cfg.algorithm = Some(v.clone());
        }
        if let Some(v) = &self.estimator {
            cfg.estimator = Some(v.clone());
        }
        cfg.seed = self.seed.or(cfg.seed);
        cfg.pseudo_count = self.pseudo_count.or(cfg.pseudo_count);
        cfg.mode = self.mode.or(cfg.mode);
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("MATCHTU_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("MATCHTU_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let started = Instant::now();
    let (overrides, runner): (&Overrides, fn(&commands::Context) -> Result<()>) = match &cli.command {
        Command::Solve(o) => (o, commands::run_solve),
        Command::Identify(o) => (o, commands::run_identify),
        Command::Fit(o) => (o, commands::run_fit),
        Command::Se(o) => (o, commands::run_se),
        Command::Simulate(o) => (o, commands::run_simulate),
    };
    let mut config = match &overrides.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::empty(),
    };
    overrides.apply(&mut config);
    config.validate()?;
    let ctx = commands::Context { config, paths: Paths::new(overrides.config.as_deref()), started };
    runner(&ctx)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
