use std::path::PathBuf;

use gauss_distill::annealing::BoundsPreset;
use gauss_distill::config::RunConfig;

use crate::{rundir, toml_string, train, CliResult, ConfigArgs, Failure, EXIT_CONFIG, EXIT_FAILURE};

#[derive(clap::ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Classifier-free guidance scale of every enabled stage.
    GuidanceScale,
    /// Noise-bound schedule of every enabled stage.
    NoiseBounds,
}

#[derive(clap::Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, value_enum, default_value = "guidance-scale")]
    pub axis: Axis,
    /// Guidance scales for the guidance-scale axis.
    #[arg(long, value_delimiter = ',', default_values_t = [10.0, 20.0, 35.0, 100.0])]
    pub scales: Vec<f64>,
    /// Presets for the noise-bounds axis; defaults to all of them.
    #[arg(long, value_delimiter = ',')]
    pub presets: Vec<String>,
    #[arg(long, default_value = "runs")]
    pub runs_dir: PathBuf,
    /// Write the per-variant configurations without training.
    #[arg(long)]
    pub dry_run: bool,
}

/// `(label, overrides)` for every point of the matrix.
pub fn variants(args: &SweepArgs) -> CliResult<Vec<(String, Vec<String>)>> {
    let stages = ["trainer.stage1", "trainer.stage2"];
    match args.axis {
        Axis::GuidanceScale => {
            if args.scales.is_empty() {
                return Err(Failure::new(EXIT_CONFIG, "--scales is empty"));
            }
            Ok(args
                .scales
                .iter()
                .map(|s| {
                    let label = format!("guidance_scale_{s}");
                    (label, stages.iter().map(|p| format!("{p}.guidance_scale={s:?}")).collect())
                })
                .collect())
        }
        Axis::NoiseBounds => {
            let presets: Vec<BoundsPreset> = if args.presets.is_empty() {
                BoundsPreset::ALL.to_vec()
            } else {
                args.presets
                    .iter()
                    .map(|p| p.parse().map_err(|e: gauss_distill::Error| Failure::from(e)))
                    .collect::<CliResult<_>>()?
            };
            Ok(presets
                .iter()
                .map(|p| {
                    let label = format!("noise_bounds_{}", p.name());
                    let value = toml_string(p.name());
                    (label, stages.iter().map(|s| format!("{s}.noise_bounds={value}")).collect())
                })
                .collect())
        }
    }
}

pub fn run(args: &SweepArgs) -> CliResult {
    let base = args.config.load()?;
    let matrix = variants(args)?;
    let mut configs: Vec<(String, RunConfig)> = Vec::new();
    for (label, overrides) in &matrix {
        let mut all = args.config.overrides.clone();
        all.extend(overrides.iter().cloned());
        let cfg = ConfigArgs {
            config: args.config.config.clone(),
            overrides: all,
        }
        .load()?;
        configs.push((label.clone(), cfg));
    }
    let suffix = match args.axis {
        Axis::GuidanceScale => "-sweep-guidance-scale",
        Axis::NoiseBounds => "-sweep-noise-bounds",
    };
    let root = rundir::create(&args.runs_dir, &base, suffix)?;
    println!("sweep directory: {}", root.display());
    let manifest: Vec<serde_json::Value> = matrix
        .iter()
        .zip(&configs)
        .map(|((label, overrides), (_, cfg))| {
            serde_json::json!({ "label": label, "overrides": overrides, "config_hash": cfg.hash() })
        })
        .collect();
    let manifest_path = root.join("sweep.json");
    std::fs::write(&manifest_path, serde_json::to_vec_pretty(&manifest).expect("manifest serializes"))
        .map_err(|e| Failure::new(EXIT_FAILURE, format!("writing {}: {e}", manifest_path.display())))?;
    for (label, cfg) in &configs {
        let dir = root.join(label);
        std::fs::create_dir_all(&dir)
            .map_err(|e| Failure::new(EXIT_FAILURE, format!("creating {}: {e}", dir.display())))?;
        rundir::write_config(&dir, cfg)?;
        if args.dry_run {
            println!("{label}: {}", dir.display());
            continue;
        }
        println!("{label}: training in {}", dir.display());
        train::train_in(cfg, None, &dir)?;
    }
    Ok(())
}
