use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::sampling::{probe_ring, sample_orbit, CameraSource};
use crate::camera::Camera;
use crate::config::{GuidanceKind, RunConfig, BUILTIN_TARGET};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::guidance::{GuidanceError, GuidanceProvider, NullProvider, OracleProvider, RemoteProvider};
use crate::image::Image;
use crate::ply::import_ply;
use crate::rasterizer::Rasterizer;
use crate::scene::GaussianScene;

/// Three colored anisotropic Gaussians inside the unit ball.
pub fn three_gaussians() -> GaussianScene<f64> {
    let about_z = |deg: f64| {
        let h = 0.5 * deg.to_radians();
        [h.cos(), 0.0, 0.0, h.sin()]
    };
    let about_x = |deg: f64| {
        let h = 0.5 * deg.to_radians();
        [h.cos(), h.sin(), 0.0, 0.0]
    };
    let mut s = GaussianScene::new();
    s.push_natural([-0.4, -0.1, 0.0], [0.30, 0.12, 0.12], about_z(30.0), 0.9, [0.95, 0.15, 0.10]);
    s.push_natural([0.4, 0.05, 0.15], [0.12, 0.28, 0.15], about_z(-20.0), 0.85, [0.10, 0.85, 0.20]);
    s.push_natural([0.0, 0.35, -0.35], [0.20, 0.20, 0.09], about_x(40.0), 0.9, [0.15, 0.25, 0.95]);
    s
}

/// A held-out evaluation view with its target rendering.
#[derive(Debug, Clone)]
pub struct EvalView {
    pub id: u32,
    pub camera: Camera,
    pub target: Image,
}

/// Everything a stage needs besides the trainable state.
pub struct StageSetup {
    pub stage: u8,
    pub provider: Box<dyn GuidanceProvider>,
    pub cameras: CameraSource,
    /// Probe cameras for pruning and visualization, with provider view ids.
    pub probes: Vec<(u32, Camera)>,
    /// Empty unless the provider holds ground truth.
    pub held_out: Vec<EvalView>,
}

impl StageSetup {
    /// Orbit sampling with the configured probe ring and an arbitrary provider.
    pub fn orbit(config: &RunConfig, stage: u8, provider: Box<dyn GuidanceProvider>) -> Self {
        let res = config.trainer.stage(stage).resolution;
        let probes = probe_ring(&config.trainer.cameras, res, config.trainer.probe_views)
            .into_iter()
            .enumerate()
            .map(|(k, c)| (k as u32, c))
            .collect();
        Self {
            stage,
            provider,
            cameras: CameraSource::Orbit(config.trainer.cameras),
            probes,
            held_out: Vec::new(),
        }
    }

    /// Builds the provider named by `guidance.kind`.
    pub fn from_config(config: &RunConfig, stage: u8, rasterizer: &Rasterizer) -> Result<Self> {
        let sc = config.trainer.stage(stage);
        match config.guidance.kind {
            GuidanceKind::Null => Ok(Self::orbit(
                config,
                stage,
                Box::new(NullProvider {
                    resolutions: vec![sc.resolution],
                }),
            )),
            GuidanceKind::Remote => {
                let provider = RemoteProvider::connect(config.guidance.remote.clone())?;
                let caps = provider.capabilities();
                if !caps.accepts(sc.guidance_space, sc.resolution, sc.resolution) {
                    return Err(GuidanceError::InvalidRequest(format!(
                        "stage {stage} needs {:?} guidance at {}x{}, server offers spaces {:?} at {:?}",
                        sc.guidance_space, sc.resolution, sc.resolution, caps.space, caps.resolution
                    ))
                    .into());
                }
                Ok(Self::orbit(config, stage, Box::new(provider)))
            }
            GuidanceKind::Oracle => Self::oracle(config, stage, rasterizer),
        }
    }

    /// Renders the oracle target from `train_views + held_out_views` sampled
    /// cameras. Ids `0..train_views` train; the rest are held out and double
    /// as probes.
    pub fn oracle(config: &RunConfig, stage: u8, rasterizer: &Rasterizer) -> Result<Self> {
        let o = &config.guidance.oracle;
        let res = config.trainer.stage(stage).resolution;
        let background = config.trainer.background.fixed().ok_or_else(|| {
            Error::Config("the oracle provider needs a fixed trainer.background color".into())
        })?;
        let target: GaussianScene<f64> = if o.target == BUILTIN_TARGET {
            three_gaussians()
        } else {
            import_ply(Path::new(&o.target))?.cast()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(o.seed);
        let mut train = Vec::new();
        let mut held_out = Vec::new();
        let mut targets = BTreeMap::new();
        for k in 0..(o.train_views + o.held_out_views) {
            let id = k as u32;
            let cam = sample_orbit(&config.trainer.cameras, res, &mut rng).with_background(background);
            let image = rasterizer.render(&target, &cam).image;
            targets.insert(id, image.clone());
            if k < o.train_views {
                train.push((id, cam));
            } else {
                held_out.push(EvalView {
                    id,
                    camera: cam,
                    target: image,
                });
            }
        }
        let schedule = NoiseSchedule::new(config.diffusion.schedule)?;
        let provider = OracleProvider::new(targets, schedule, config.diffusion.weights);
        Ok(Self {
            stage,
            provider: Box::new(provider),
            cameras: CameraSource::Views(train),
            probes: held_out.iter().map(|v| (v.id, v.camera.clone())).collect(),
            held_out,
        })
    }
}
