use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use gauss_distill::config::RunConfig;
use gauss_distill::ply::export_ply;
use gauss_distill::trainer::{checkpoint, RunOutput, StageSummary, TrainState, Trainer};

use crate::{rundir, CliResult, ConfigArgs, Failure, EXIT_CONFIG};

pub const FINAL_SCENE: &str = "scene.ply";

#[derive(clap::Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Parent directory for run directories.
    #[arg(long, default_value = "runs")]
    pub runs_dir: PathBuf,
    /// Continue from a checkpoint directory, in that checkpoint's run
    /// directory and with its stored configuration.
    #[arg(long, conflicts_with = "config")]
    pub resume: Option<PathBuf>,
}

/// Installs a Ctrl-C handler once per process.
pub fn stop_flag() -> Arc<AtomicBool> {
    static FLAG: std::sync::OnceLock<Arc<AtomicBool>> = std::sync::OnceLock::new();
    FLAG.get_or_init(|| {
        let flag = Arc::new(AtomicBool::new(false));
        let f = flag.clone();
        if let Err(e) = ctrlc::set_handler(move || {
            if f.swap(true, Ordering::SeqCst) {
                std::process::exit(crate::EXIT_INTERRUPTED as i32);
            }
            eprintln!("interrupt received; writing a checkpoint (press again to abort)");
        }) {
            log::warn!("cannot install the interrupt handler: {e}");
        }
        flag
    })
    .clone()
}

pub fn run(args: &TrainArgs) -> CliResult {
    let (config, state, dir) = match &args.resume {
        Some(ckpt) => {
            if !args.config.overrides.is_empty() {
                return Err(Failure::new(EXIT_CONFIG, "--set cannot be combined with --resume"));
            }
            let (config, state) = checkpoint::load(ckpt)?;
            (config, Some(state), rundir::run_root_of(ckpt))
        }
        None => {
            let config = args.config.load()?;
            let dir = rundir::create(&args.runs_dir, &config, "")?;
            (config, None, dir)
        }
    };
    println!("run directory: {}", dir.display());
    let summaries = train_in(&config, state, &dir)?;
    for s in &summaries {
        println!(
            "stage {}: {} iterations, {} primitives, {} density events, {} skipped steps",
            s.stage,
            s.iterations,
            s.final_count,
            s.events.len(),
            s.skipped
        );
    }
    println!("final scene: {}", dir.join(FINAL_SCENE).display());
    Ok(())
}

/// Trains into `dir` and writes the final scene there.
pub fn train_in(config: &RunConfig, state: Option<TrainState>, dir: &std::path::Path) -> CliResult<Vec<StageSummary>> {
    let output = RunOutput::open(dir)?;
    let mut trainer = Trainer::new(config.clone())?
        .with_output(output)
        .with_stop_flag(stop_flag());
    let mut state = match state {
        Some(s) => s,
        None => TrainState::new(config)?,
    };
    let summaries = trainer.run(&mut state).map_err(|e| {
        let mut f = Failure::from(e);
        if let Some(last) = trainer.last_checkpoint() {
            f.message = format!("{} (resume with --resume {})", f.message, last.display());
        }
        f
    })?;
    export_ply(&state.scene, dir.join(FINAL_SCENE))?;
    Ok(summaries)
}
