//! `gdistill`: train, render, export, inspect and sweep Gaussian scenes
//! distilled from a diffusion-model guidance provider.

mod inspect;
mod render;
mod rundir;
mod sweep;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_GUIDANCE: u8 = 3;
pub const EXIT_CHECKPOINT: u8 = 4;
pub const EXIT_INTERRUPTED: u8 = 130;

/// A message and the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<gauss_distill::Error> for Failure {
    fn from(e: gauss_distill::Error) -> Self {
        use gauss_distill::Error as E;
        let code = match &e {
            E::Config(_) => EXIT_CONFIG,
            E::Guidance(_) => EXIT_GUIDANCE,
            E::Checkpoint { .. } => EXIT_CHECKPOINT,
            E::Interrupted { .. } => EXIT_INTERRUPTED,
            _ => EXIT_FAILURE,
        };
        Self::new(code, e.to_string())
    }
}

pub type CliResult<T = ()> = Result<T, Failure>;

#[derive(Parser)]
#[command(name = "gdistill", version, about = "Score-distillation training of 3D Gaussian scenes")]
struct Cli {
    /// Log verbosity: -v for debug, -vv for trace. RUST_LOG takes precedence.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a scene and write logs, checkpoints and the final PLY to a new run directory.
    Train(train::TrainArgs),
    /// Render PNGs from a checkpoint: a turntable ring or a single camera.
    Render(render::RenderArgs),
    /// Write a checkpoint's scene as a standalone PLY file.
    Export(render::ExportArgs),
    /// Summarize a run's density-control events and noise-bound trace.
    Inspect(inspect::InspectArgs),
    /// Materialize and run a guidance-scale or noise-bound ablation matrix.
    Sweep(sweep::SweepArgs),
}

/// Shared `--config` / `--set` handling.
#[derive(clap::Args, Debug, Clone)]
pub struct ConfigArgs {
    /// TOML run configuration; defaults apply to omitted keys.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set trainer.stage1.iterations=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

pub const ENDPOINT_ENV: &str = "GDP_ENDPOINT";

impl ConfigArgs {
    /// File, then `GDP_ENDPOINT`, then `--set` overrides.
    pub fn load(&self) -> CliResult<gauss_distill::config::RunConfig> {
        use gauss_distill::config::RunConfig;
        let mut overrides = Vec::new();
        if let Ok(endpoint) = std::env::var(ENDPOINT_ENV) {
            if !endpoint.is_empty() {
                overrides.push(format!("guidance.remote.endpoint={}", toml_string(&endpoint)));
            }
        }
        overrides.extend(self.overrides.iter().cloned());
        let config = match &self.config {
            Some(path) => RunConfig::load(path, &overrides)?,
            None => RunConfig::with_overrides(&overrides)?,
        };
        Ok(config)
    }
}

/// Quotes a string as a TOML basic string.
pub fn toml_string(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp_millis()
        .init();
    let result = match &cli.command {
        Command::Train(a) => train::run(a),
        Command::Render(a) => render::run_render(a),
        Command::Export(a) => render::run_export(a),
        Command::Inspect(a) => inspect::run(a),
        Command::Sweep(a) => sweep::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
