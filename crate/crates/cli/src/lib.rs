//! `contraction-cert`: certify contractivity of systems described in JSON
//! spec files, check the guaranteed bounds by simulation and scan for
//! locally contracting regions.
//!
//! Exit codes: 0 pass or certificate found, 1 legitimate negative, 2 parse
//! error, 3 dimension or validation error, 4 runtime failure (blow-up).

// `!(x > 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod error;
pub mod input;
pub mod report;
pub mod spec;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::{Options, Outcome};
use crate::error::{CliError, CliResult};
use crate::report::Check;

#[derive(Debug, Parser)]
#[command(name = "contraction-cert", version, about = "Contractivity certificates for dynamical systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// l1, l2, linf, wl2:<P.json> or winf:<eta.json>
    #[arg(long, global = true)]
    pub norm: Option<String>,
    /// Base seed for sampling and trajectory pairs.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    /// `t0,t1`
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub tspan: Option<String>,
    /// Directory for CSV output and a copy of the report.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Leave the generation time out of the report.
    #[arg(long, global = true)]
    pub no_timestamp: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Log norm, induced norm and spectral radius/abscissa of a matrix.
    Lognorm { matrix: PathBuf },
    /// Find a contraction certificate for a system spec.
    Certify { spec: PathBuf },
    /// Simulate and check a guaranteed bound.
    Simulate {
        spec: PathBuf,
        #[arg(long, value_enum, default_value = "incremental")]
        check: Check,
    },
    /// Grid of μ(DF(x)) and a contraction ball, for dimension ≤ 3.
    Scan {
        spec: PathBuf,
        #[arg(long, default_value_t = 21)]
        grid: usize,
    },
}

/// Worker-count cap read from the environment.
pub const THREADS_ENV: &str = "CONTRACTION_CERT_THREADS";

pub fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|t| *t > 0)
        .ok_or_else(|| CliError::Parse(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
    contraction_core::exec::configure_threads(threads).map_err(CliError::Runtime)
}

pub fn run(cli: &Cli) -> CliResult<Outcome> {
    let opts = Options {
        norm: cli.norm.as_deref().map(input::parse_norm_flag).transpose()?,
        seed: cli.seed,
        dt: cli.dt,
        t_span: cli.tspan.as_deref().map(input::parse_tspan).transpose()?,
        out: cli.out.clone(),
        timestamp: !cli.no_timestamp,
    };
    match &cli.command {
        Command::Lognorm { matrix } => commands::lognorm(matrix, &opts),
        Command::Certify { spec } => commands::certify(spec, &opts),
        Command::Simulate { spec, check } => commands::simulate(spec, *check, &opts),
        Command::Scan { spec, grid } => commands::scan(spec, *grid, &opts),
    }
}
