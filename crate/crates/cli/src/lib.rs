//! The `pld` command-line tool.

pub mod config;
mod commands;
mod samples;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::run;
pub use config::{ConfigArgs, Coords, RunConfig};
pub use samples::load_samples;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("{stage}: {message}")]
    Numeric { stage: &'static str, message: String },
    #[error("i/o: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Data(_) => 2,
            CliError::Numeric { .. } => 3,
            CliError::Io(_) => 4,
        }
    }

    pub(crate) fn numeric(stage: &'static str, e: impl std::fmt::Display) -> Self {
        CliError::Numeric {
            stage,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "pld", version, about = "Principal geodesics of latent samples on a Riemannian chart")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fréchet mean, tangent-space SVD and principal geodesics
    Pld(PldArgs),
    /// Geodesic distance field from one source
    DistanceField(DistanceFieldArgs),
    /// Initial velocity of the geodesic between two points
    Logmap(LogmapArgs),
    /// Fréchet mean of a sample file
    Mean(MeanArgs),
    /// Magnification factor survey of the chart
    DiagnoseMf(DiagnoseMfArgs),
    /// Geodesic from a point and an initial velocity
    Exp(ExpArgs),
}

#[derive(Args, Debug)]
pub struct PldArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct MeanArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct DistanceFieldArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Source point, e.g. 0,0
    #[arg(long, allow_hyphen_values = true)]
    pub source: Coords,
}

#[derive(Args, Debug)]
pub struct LogmapArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, allow_hyphen_values = true)]
    pub from: Coords,
    #[arg(long, allow_hyphen_values = true)]
    pub to: Coords,
}

#[derive(Args, Debug)]
pub struct ExpArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, allow_hyphen_values = true)]
    pub from: Coords,
    #[arg(long, allow_hyphen_values = true)]
    pub velocity: Coords,
}

#[derive(Args, Debug)]
pub struct DiagnoseMfArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Lattice nodes per axis
    #[arg(long, default_value_t = 129)]
    pub mf_resolution: usize,
    #[arg(long, default_value_t = pld_core::manifold::DEFAULT_HISTOGRAM_BINS)]
    pub bins: usize,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let env_dir = std::env::var_os(config::OUTPUT_DIR_ENV).map(PathBuf::from);
    match run(&cli, env_dir) {
        Ok(dir) => {
            eprintln!("wrote {}", dir.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
