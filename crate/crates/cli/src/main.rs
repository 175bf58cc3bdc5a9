//! `vstar`: experiment driver for vertical star products on flat tangent bundles.
//!
//! Exit codes: 0 success, 1 a check found a violation, 2 invalid configuration
//! or arguments, 3 numeric or runtime failure.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::CheckKind;
use crate::config::{ExperimentConfig, Format};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) | CliError::Io(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "invalid configuration: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
            CliError::Io(m) => write!(f, "i/o failure: {m}"),
        }
    }
}

impl From<vstar_core::Error> for CliError {
    fn from(e: vstar_core::Error) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<vstar_core::formal::SeriesError> for CliError {
    fn from(e: vstar_core::formal::SeriesError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "vstar",
    version,
    about = "Vertical star products, deformed states and the deformed light cone"
)]
struct Cli {
    /// Experiment configuration (JSON). Without it, n = 4 with the standard symplectic Moyal product.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Numeric value substituted for λ.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Truncation order N_λ.
    #[arg(long, global = true)]
    order: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Classical and deformed light cone over a grid of spatial norms.
    Lightcone,
    /// Expectation, variance and causal class of the Lorentz square at a point.
    Distance {
        /// Fiber point (n values) or full point (2n values), comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        point: Option<Vec<f64>>,
    },
    /// Run one consistency check; exits 1 on a violation.
    Check {
        #[arg(value_enum)]
        which: CheckKind,
    },
    /// Commutators of relative coordinates in the pair picture.
    PairsDemo {
        /// A pair (q, q'), 2n comma separated values; repeatable.
        #[arg(long = "pair", value_delimiter = ',', allow_hyphen_values = true, num_args = 1)]
        pairs: Vec<String>,
    },
}

fn load(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?
        }
        None => ExperimentConfig::minimal(4),
    };
    if let Some(l) = cli.lambda {
        cfg.lambda_num = Some(l);
    }
    if let Some(k) = cli.order {
        cfg.n_lambda = k;
    }
    if let Some(s) = cli.seed {
        cfg.samples.seed = s;
    }
    if let Some(p) = &cli.out {
        cfg.output.path = Some(p.clone());
    }
    if let Some(f) = cli.format {
        cfg.output.format = f;
    }
    match &cli.command {
        Command::Distance { point: Some(p) } => cfg.point = Some(p.clone()),
        Command::PairsDemo { pairs } if !pairs.is_empty() => {
            // clap splits on ',' so each value arrives separately; regroup by 2n
            let values: Vec<f64> = pairs
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::Config(format!("--pair: {e}")))?;
            let width = 2 * cfg.n;
            if !values.len().is_multiple_of(width) {
                return Err(CliError::Config(format!("--pair takes {width} values per pair")));
            }
            cfg.pairs = values.chunks(width).map(<[f64]>::to_vec).collect();
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<bool, CliError> {
    let cfg = load(cli)?;
    let report = match &cli.command {
        Command::Lightcone => commands::lightcone(&cfg)?,
        Command::Distance { .. } => commands::distance(&cfg)?,
        Command::Check { which } => commands::check(&cfg, *which)?,
        Command::PairsDemo { .. } => commands::pairs_demo(&cfg)?,
    };
    report.emit(cfg.output.format, cfg.output.path.as_deref())?;
    Ok(report.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("vstar: {e}");
            ExitCode::from(e.code())
        }
    }
}
