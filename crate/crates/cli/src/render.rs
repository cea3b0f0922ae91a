use std::path::{Path, PathBuf};

use gauss_distill::camera::Camera;
use gauss_distill::config::RunConfig;
use gauss_distill::ply::export_ply;
use gauss_distill::rasterizer::Rasterizer;
use gauss_distill::trainer::{checkpoint, sampling, TrainState};

use crate::{rundir, CliResult, Failure, EXIT_CONFIG, EXIT_FAILURE};

#[derive(clap::Args, Debug)]
pub struct RenderArgs {
    /// Checkpoint directory (contains scene.ply and state.json).
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Number of equally spaced azimuths on a ring at fixed elevation.
    #[arg(long, conflicts_with = "camera")]
    pub turntable: Option<usize>,
    /// Single orbit camera as `radius,elevation,azimuth[,fov]` (degrees).
    #[arg(long, allow_hyphen_values = true)]
    pub camera: Option<String>,
    /// Turntable elevation in degrees; defaults to the middle of the training range.
    #[arg(long, allow_hyphen_values = true)]
    pub elevation: Option<f64>,
    /// Turntable radius; defaults to the middle of the training range.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Vertical field of view in degrees; defaults to the middle of the training range.
    #[arg(long)]
    pub fov: Option<f64>,
    /// Square output side in pixels.
    #[arg(long, default_value_t = 256)]
    pub resolution: usize,
    /// Background as `r,g,b` in [0, 1]; defaults to the run's fixed color or mid gray.
    #[arg(long)]
    pub background: Option<String>,
    /// Output directory; defaults to `renders/<checkpoint>` inside the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output file; defaults to `exports/<checkpoint>.ply` inside the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_floats(s: &str, what: &str, min: usize, max: usize) -> CliResult<Vec<f64>> {
    let v: Result<Vec<f64>, _> = s.split(',').map(|p| p.trim().parse::<f64>()).collect();
    match v {
        Ok(v) if (min..=max).contains(&v.len()) && v.iter().all(|x| x.is_finite()) => Ok(v),
        _ => Err(Failure::new(
            EXIT_CONFIG,
            format!("--{what} expects {min} to {max} comma-separated numbers, got {s:?}"),
        )),
    }
}

fn checkpoint_name(ckpt: &Path) -> String {
    ckpt.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into())
}

/// One PNG per camera.
pub fn cameras(args: &RenderArgs, config: &RunConfig) -> CliResult<Vec<(String, Camera)>> {
    let ranges = &config.trainer.cameras;
    let mid = |r: [f64; 2]| 0.5 * (r[0] + r[1]);
    let res = args.resolution;
    if res == 0 {
        return Err(Failure::new(EXIT_CONFIG, "--resolution must be at least 1"));
    }
    let fov = args.fov.unwrap_or(mid(ranges.fov));
    if let Some(spec) = &args.camera {
        let v = parse_floats(spec, "camera", 3, 4)?;
        let fov = v.get(3).copied().unwrap_or(fov);
        let name = format!("camera_r{:.2}_el{:.1}_az{:.1}.png", v[0], v[1], v[2]);
        return Ok(vec![(name, Camera::orbit(v[0], v[1], v[2], fov, res, res))]);
    }
    let n = args.turntable.unwrap_or(8);
    if n == 0 {
        return Err(Failure::new(EXIT_CONFIG, "--turntable must be at least 1"));
    }
    let radius = args.radius.unwrap_or(mid(ranges.radius));
    let elevation = args.elevation.unwrap_or(mid(ranges.elevation));
    Ok((0..n)
        .map(|k| {
            let az = 360.0 * k as f64 / n as f64;
            (
                format!("turntable_{k:03}_az{az:06.2}.png"),
                Camera::orbit(radius, elevation, az, fov, res, res),
            )
        })
        .collect())
}

pub fn run_render(args: &RenderArgs) -> CliResult {
    let (config, state): (RunConfig, TrainState) = checkpoint::load(&args.checkpoint)?;
    let background = match &args.background {
        Some(s) => {
            let v = parse_floats(s, "background", 3, 3)?;
            if v.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Failure::new(EXIT_CONFIG, format!("--background {s:?} outside [0, 1]")));
            }
            [v[0], v[1], v[2]]
        }
        None => sampling::display_background(&config.trainer.background),
    };
    let out = args.out.clone().unwrap_or_else(|| {
        rundir::run_root_of(&args.checkpoint)
            .join("renders")
            .join(checkpoint_name(&args.checkpoint))
    });
    std::fs::create_dir_all(&out).map_err(|e| Failure::new(EXIT_FAILURE, format!("creating {}: {e}", out.display())))?;
    let rasterizer = Rasterizer::new(config.render);
    for (name, cam) in cameras(args, &config)? {
        let cam = cam.with_background(background);
        let path = out.join(name);
        rasterizer.render(&state.scene, &cam).image.save_png(&path)?;
        println!("{}", path.display());
    }
    Ok(())
}

pub fn run_export(args: &ExportArgs) -> CliResult {
    let (_, state) = checkpoint::load(&args.checkpoint)?;
    let out = args.out.clone().unwrap_or_else(|| {
        rundir::run_root_of(&args.checkpoint)
            .join("exports")
            .join(format!("{}.ply", checkpoint_name(&args.checkpoint)))
    });
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| Failure::new(EXIT_FAILURE, format!("creating {}: {e}", parent.display())))?;
    }
    export_ply(&state.scene, &out)?;
    println!("{} ({} primitives)", out.display(), state.scene.len());
    Ok(())
}
