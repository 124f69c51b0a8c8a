//! `udf`: fit unsigned distance fields to point clouds and use them.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use commands::CliError;

#[derive(Debug, Parser)]
#[command(name = "udf", version, about = "Fit unsigned distance fields to raw point clouds and extract surfaces, normals and upsampled clouds")]
struct Cli {
    /// Worker threads for evaluation-heavy steps (0 = all cores). Training
    /// itself is single-threaded.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a field on a point cloud.
    Fit(FitArgs),
    /// Extract a triangle mesh from a trained field.
    Reconstruct(ReconstructArgs),
    /// Estimate unoriented normals at the points of a cloud.
    Normals(NormalsArgs),
    /// Generate a denser cloud on the learned surface.
    Upsample(UpsampleArgs),
    /// Compare a prediction with ground truth.
    Eval(EvalArgs),
    /// Write the analytic test shapes as point clouds.
    Fixtures(FixturesArgs),
    /// Repeat a run from its manifest into a new directory.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Full-size network and batch.
    Default,
    /// Small network used by the analytic fixtures.
    Fixture,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FitArgs {
    /// Point cloud (.xyz, .ply or .obj).
    pub input: PathBuf,
    /// Run directory to create.
    #[arg(long)]
    pub out: PathBuf,
    /// Key-value config file; `#` starts a comment.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long, value_enum, default_value_t = Preset::Default)]
    pub preset: Preset,
    /// Suppress progress lines.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum MeshFileFormat {
    Obj,
    Ply,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReconstructArgs {
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Lattice points per axis.
    #[arg(long, default_value_t = 128)]
    pub resolution: usize,
    /// Activation threshold in normalized units (default: twice the cell
    /// diagonal).
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Dot products within ±tau count as ambiguous.
    #[arg(long, default_value_t = 0.0)]
    pub tau: f64,
    #[arg(long, value_enum, default_value_t = MeshFileFormat::Obj)]
    pub format: MeshFileFormat,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct NormalsArgs {
    pub checkpoint: PathBuf,
    /// Cloud whose points get normals, in the original frame.
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum CloudFileFormat {
    Xyz,
    Ply,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct UpsampleArgs {
    pub checkpoint: PathBuf,
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Output has this many times as many points as the input.
    #[arg(long, default_value_t = 4)]
    pub factor: usize,
    /// Keep queries with field value below this (normalized units).
    #[arg(long, default_value_t = 0.05)]
    pub beta: f64,
    #[arg(long, default_value_t = 10)]
    pub max_rounds: usize,
    #[arg(long, default_value_t = 1)]
    pub pull_steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = CloudFileFormat::Xyz)]
    pub format: CloudFileFormat,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    /// Predicted mesh or cloud.
    pub pred: PathBuf,
    /// Ground-truth mesh or cloud.
    pub gt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// F-score thresholds, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.005, 0.01])]
    pub thresholds: Vec<f64>,
    /// Points sampled from each mesh input.
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FixturesArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Shapes to write (default: all).
    #[arg(long = "shape", value_name = "NAME")]
    pub shapes: Vec<String>,
    #[arg(long, default_value_t = 10_000)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Standard deviation of isotropic Gaussian noise added to samples.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Write six columns with the exact normals.
    #[arg(long)]
    pub with_normals: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RerunArgs {
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { commands::EXIT_USAGE } else { 0 });
        }
    };
    udf_core::parallel::set_thread_limit(cli.threads);
    let result = match cli.command {
        Command::Fit(a) => commands::fit(&a, cli.threads, None),
        Command::Reconstruct(a) => commands::reconstruct(&a, cli.threads),
        Command::Normals(a) => commands::normals(&a, cli.threads),
        Command::Upsample(a) => commands::upsample(&a, cli.threads),
        Command::Eval(a) => commands::eval(&a, cli.threads),
        Command::Fixtures(a) => commands::fixtures(&a, cli.threads),
        Command::Rerun(a) => commands::rerun(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => e.fmt(f),
            CliError::Shortfall(s) => s.fmt(f),
        }
    }
}
