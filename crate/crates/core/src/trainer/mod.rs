//! The optimization loop: sample a view, render, ask the guidance provider for
//! an image-space gradient, backpropagate it through the rasterizer and take
//! one optimizer step. Density control runs on its fixed schedule in stages
//! that enable it.

pub mod checkpoint;
pub mod output;
pub mod sampling;
pub mod setup;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use output::{LoggedEvent, MetricsRecord, RunOutput};
pub use sampling::CameraSource;
pub use setup::{three_gaussians, EvalView, StageSetup};

use crate::config::{RunConfig, StageConfig};
use crate::density::{densify, prune, reset_opacity, DensityEvent, GradStats};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::guidance::{GuidanceError, GuidanceRequest};
use crate::image::{psnr, Image};
use crate::optim::{Adam, LearningRates, StepOutcome};
use crate::rasterizer::Rasterizer;
use crate::scene::{init_scene, GaussianScene};

/// Quaternion norm tolerance for the post-step scene check.
const QUAT_TOLERANCE: f64 = 1e-3;
/// Position learning-rate factor inside the finetune window.
pub const FINETUNE_POSITION_DECAY: f64 = 0.1;

/// Everything that evolves during training. The scene itself is stored as PLY
/// in checkpoints and skipped by serde.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    #[serde(skip)]
    pub scene: GaussianScene<f32>,
    /// 1 or 2.
    pub stage: u8,
    /// Completed steps in the current stage.
    pub iteration: usize,
    pub adam: Adam,
    pub stats: GradStats,
    pub rng: ChaCha8Rng,
    /// Steps dropped for non-finite gradients, over the whole run.
    pub skipped: usize,
}

impl TrainState {
    /// Fresh state at the first enabled stage.
    pub fn new(config: &RunConfig) -> Result<Self> {
        let scene: GaussianScene<f32> = init_scene(&config.scene)?;
        Ok(Self::from_scene(config, scene))
    }

    pub fn from_scene(config: &RunConfig, scene: GaussianScene<f32>) -> Self {
        let n = scene.len();
        Self {
            scene,
            stage: if config.trainer.stage1.enabled { 1 } else { 2 },
            iteration: 0,
            adam: Adam::new(config.optimizer, n),
            stats: GradStats::new(n),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            skipped: 0,
        }
    }

    /// Moves to stage 2 with fresh optimizer moments and statistics.
    pub fn begin_stage2(&mut self, config: &RunConfig) {
        let n = self.scene.len();
        self.stage = 2;
        self.iteration = 0;
        self.adam = Adam::new(config.optimizer, n);
        self.stats = GradStats::new(n);
    }

    /// Internal consistency: aligned lengths and a valid scene.
    pub fn check(&self) -> Result<()> {
        if !(self.stage == 1 || self.stage == 2) {
            return Err(Error::Internal(format!("stage {} is not 1 or 2", self.stage)));
        }
        let n = self.scene.len();
        if self.adam.len() != n || self.stats.len() != n {
            return Err(Error::Internal(format!(
                "state covers {} / {} primitives, scene has {n}",
                self.adam.len(),
                self.stats.len()
            )));
        }
        self.scene.validate(QUAT_TOLERANCE)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub metrics: MetricsRecord,
    pub events: Vec<DensityEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: u8,
    pub iterations: usize,
    pub final_count: usize,
    pub skipped: usize,
    pub events: Vec<DensityEvent>,
    pub checkpoint: Option<PathBuf>,
}

pub struct Trainer {
    config: RunConfig,
    rasterizer: Rasterizer,
    schedule: NoiseSchedule,
    output: Option<RunOutput>,
    stop: Option<Arc<AtomicBool>>,
    last_good: Option<PathBuf>,
    preview_warned: bool,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            rasterizer: Rasterizer::new(config.render),
            schedule: NoiseSchedule::new(config.diffusion.schedule)?,
            config,
            output: None,
            stop: None,
            last_good: None,
            preview_warned: false,
        })
    }

    /// Enables logs, checkpoints and visualization dumps under the output root.
    pub fn with_output(mut self, output: RunOutput) -> Self {
        self.output = Some(output);
        self
    }

    /// Training checkpoints and returns `Interrupted` once the flag is set.
    pub fn with_stop_flag(mut self, stop: Arc<AtomicBool>) -> Self {
        self.stop = Some(stop);
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn rasterizer(&self) -> &Rasterizer {
        &self.rasterizer
    }

    pub fn output(&self) -> Option<&RunOutput> {
        self.output.as_ref()
    }

    pub fn last_checkpoint(&self) -> Option<&Path> {
        self.last_good.as_deref()
    }

    /// Stage setup as configured by `guidance.kind`.
    pub fn setup_stage(&self, stage: u8) -> Result<StageSetup> {
        StageSetup::from_config(&self.config, stage, &self.rasterizer)
    }

    /// Learning rates in effect at `iteration`: the position rate drops inside
    /// the finetune window that follows density control.
    pub fn learning_rates(&self, stage: &StageConfig, iteration: usize) -> LearningRates {
        let mut lr = stage.learning_rates;
        if stage.density_control_enabled && iteration >= self.config.density.densify_end {
            lr.position *= FINETUNE_POSITION_DECAY;
        }
        lr
    }

    /// One optimization step followed by any scheduled density-control events.
    pub fn train_step(&mut self, state: &mut TrainState, setup: &StageSetup) -> Result<StepReport> {
        let started = Instant::now();
        let sc = self.config.trainer.stage(setup.stage).clone();
        let i = state.iteration;

        let (view_id, mut camera) = setup.cameras.sample(sc.resolution, &mut state.rng);
        camera.background = sampling::sample_background(&self.config.trainer.background, &mut state.rng);
        let image = self.rasterizer.render(&state.scene, &camera).image;
        let bounds = sc.noise_bounds.schedule();
        let u = bounds.sample(i, sc.iterations, &mut state.rng);
        let seed: u64 = state.rng.random();
        let request = GuidanceRequest {
            image,
            noise_fraction: u,
            seed,
            prompt: self.config.prompt.clone(),
            guidance_scale: sc.guidance_scale,
            space: sc.guidance_space,
            view_id,
        };
        let response = setup.provider.guide(&request)?;
        let grad_image = response.grad_image;
        if !grad_image.same_shape(&request.image) {
            return Err(GuidanceError::ShapeMismatch {
                expected: (request.image.height, request.image.width),
                found: (grad_image.height, grad_image.width),
            }
            .into());
        }

        let grads = self.rasterizer.render_backward(&state.scene, &camera, &grad_image);
        let lr = self.learning_rates(&sc, i);
        let skipped = match state.adam.step(&mut state.scene, &grads, &lr) {
            StepOutcome::Applied => {
                if sc.density_control_enabled {
                    state.stats.observe(&grads, camera.width, camera.height);
                }
                false
            }
            StepOutcome::SkippedNonFinite => {
                log::warn!("stage {} iteration {i}: non-finite gradient, step skipped", setup.stage);
                state.skipped += 1;
                true
            }
        };

        let mut events = Vec::new();
        if sc.density_control_enabled {
            let d = &self.config.density;
            if d.should_densify(i) {
                let change = densify(&mut state.scene, &state.stats, d, lr.position, i, &mut state.rng)?;
                state.adam.remap(&change.sources);
                events.push(change.event);
                let probes: Vec<_> = setup.probes.iter().map(|(_, c)| c.clone()).collect();
                let change = prune(&mut state.scene, d, &probes, self.config.render.low_pass, i);
                state.adam.remap(&change.sources);
                events.push(change.event);
                state.stats = GradStats::new(state.scene.len());
            }
            if d.should_reset_opacity(i) {
                events.push(reset_opacity(&mut state.scene, d.opacity_reset_value, i));
            }
            if !events.is_empty() {
                state.check()?;
            }
        }
        state.iteration += 1;

        let metrics = MetricsRecord {
            stage: setup.stage,
            iteration: i,
            loss_proxy: grad_image.squared_norm(),
            n: state.scene.len(),
            u,
            t: self.schedule.timestep(u),
            view_id,
            skipped,
            ms: started.elapsed().as_secs_f64() * 1e3,
        };
        if let Some(out) = &mut self.output {
            out.metric(&metrics)?;
            for e in &events {
                out.event(&LoggedEvent {
                    stage: setup.stage,
                    event: e.clone(),
                })?;
            }
        }
        Ok(StepReport { metrics, events })
    }

    /// Runs the remaining iterations of the state's current stage, with
    /// periodic checkpoints and visualizations when an output is attached.
    pub fn run_stage(&mut self, state: &mut TrainState, setup: &StageSetup) -> Result<StageSummary> {
        if state.stage != setup.stage {
            return Err(Error::Internal(format!(
                "state is in stage {}, setup is for stage {}",
                state.stage, setup.stage
            )));
        }
        let sc = self.config.trainer.stage(setup.stage).clone();
        let caps = setup.provider.capabilities();
        if !caps.accepts(sc.guidance_space, sc.resolution, sc.resolution) {
            return Err(GuidanceError::InvalidRequest(format!(
                "provider does not offer {:?} guidance at {}x{} (spaces {:?}, resolutions {:?})",
                sc.guidance_space, sc.resolution, sc.resolution, caps.space, caps.resolution
            ))
            .into());
        }
        log::info!(
            "stage {}: {} iterations at {}x{}, {} primitives",
            setup.stage,
            sc.iterations - state.iteration.min(sc.iterations),
            sc.resolution,
            sc.resolution,
            state.scene.len()
        );
        let (vis_every, ckpt_every) = (self.config.trainer.visualize_every, self.config.trainer.checkpoint_every);
        let mut events = Vec::new();
        let mut checkpoint = None;
        while state.iteration < sc.iterations {
            if self.stop.as_ref().is_some_and(|s| s.load(Ordering::SeqCst)) {
                self.checkpoint(state)?;
                return Err(Error::Interrupted {
                    iteration: state.iteration,
                });
            }
            let report = self.train_step(state, setup)?;
            events.extend(report.events);
            let done = state.iteration;
            if vis_every > 0 && done % vis_every == 0 {
                if let Some(dir) = self.output.as_ref().map(RunOutput::vis_dir) {
                    self.dump_visualization(state, setup, &dir)?;
                }
            }
            if ckpt_every > 0 && done % ckpt_every == 0 && done < sc.iterations {
                checkpoint = self.checkpoint(state)?;
            }
        }
        if self.output.is_some() {
            checkpoint = self.checkpoint(state)?;
        }
        log::info!(
            "stage {} done: {} primitives, {} skipped steps",
            setup.stage,
            state.scene.len(),
            state.skipped
        );
        Ok(StageSummary {
            stage: setup.stage,
            iterations: sc.iterations,
            final_count: state.scene.len(),
            skipped: state.skipped,
            events,
            checkpoint,
        })
    }

    /// Runs every remaining enabled stage, building each stage's setup from
    /// the configuration.
    pub fn run(&mut self, state: &mut TrainState) -> Result<Vec<StageSummary>> {
        let mut summaries = Vec::new();
        loop {
            if self.config.trainer.stage(state.stage).enabled {
                let setup = self.setup_stage(state.stage)?;
                summaries.push(self.run_stage(state, &setup)?);
            }
            if state.stage == 1 && self.config.trainer.stage2.enabled {
                state.begin_stage2(&self.config);
            } else {
                return Ok(summaries);
            }
        }
    }

    /// Writes a checkpoint when an output is attached.
    pub fn checkpoint(&mut self, state: &TrainState) -> Result<Option<PathBuf>> {
        let Some(out) = &mut self.output else {
            return Ok(None);
        };
        out.flush()?;
        let path = checkpoint::save(&out.checkpoint_dir(), &self.config, state, self.last_good.as_deref())?;
        self.last_good = Some(path.clone());
        Ok(Some(path))
    }

    /// Writes `rendering | x̂` panels for every probe camera into `dir`. Uses
    /// an RNG derived from the seed and iteration, so training is unaffected.
    /// Returns no files when the provider has no previews.
    pub fn dump_visualization(&mut self, state: &TrainState, setup: &StageSetup, dir: &Path) -> Result<Vec<PathBuf>> {
        if !setup.provider.capabilities().preview {
            if !self.preview_warned {
                log::warn!("guidance provider offers no x_hat previews; visualization skipped");
                self.preview_warned = true;
            }
            return Ok(Vec::new());
        }
        let sc = self.config.trainer.stage(setup.stage);
        let bounds = sc.noise_bounds.schedule();
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.config.seed ^ (state.iteration as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((setup.stage as u64) << 56),
        );
        let background = sampling::display_background(&self.config.trainer.background);
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        for (id, cam) in &setup.probes {
            let cam = cam.clone().with_background(background);
            let image = self.rasterizer.render(&state.scene, &cam).image;
            let u = bounds.sample(state.iteration, sc.iterations, &mut rng);
            let request = GuidanceRequest {
                image,
                noise_fraction: u,
                seed: rng.random(),
                prompt: self.config.prompt.clone(),
                guidance_scale: sc.guidance_scale,
                space: sc.guidance_space,
                view_id: Some(*id),
            };
            let response = setup.provider.guide(&request)?;
            let Some(preview) = response.x_hat_preview else {
                if !self.preview_warned {
                    log::warn!("guidance response carried no x_hat preview; visualization skipped");
                    self.preview_warned = true;
                }
                return Ok(written);
            };
            let panel = request.image.side_by_side(&preview)?;
            let path = dir.join(visualization_name(setup.stage, state.iteration, *id, u));
            panel.save_png(&path)?;
            written.push(path);
        }
        Ok(written)
    }

    /// Mean PSNR of the current scene against the held-out views.
    pub fn evaluate(&self, state: &TrainState, views: &[EvalView]) -> Option<f64> {
        mean_psnr(&self.rasterizer, &state.scene, views)
    }
}

/// `vis_s{stage}_it{iteration:06}_cam{id:02}_u{u:.3}.png`.
pub fn visualization_name(stage: u8, iteration: usize, camera_id: u32, u: f64) -> String {
    format!("vis_s{stage}_it{iteration:06}_cam{camera_id:02}_u{u:.3}.png")
}

pub fn mean_psnr(rasterizer: &Rasterizer, scene: &GaussianScene<f32>, views: &[EvalView]) -> Option<f64> {
    if views.is_empty() {
        return None;
    }
    let total: f64 = views
        .iter()
        .map(|v| {
            let img: Image = rasterizer.render(scene, &v.camera).image;
            psnr(&img, &v.target)
        })
        .sum();
    Some(total / views.len() as f64)
}
