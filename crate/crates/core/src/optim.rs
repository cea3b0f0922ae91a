//! Adam with one learning rate per parameter class.
//!
//! Moments are kept in `f64` for every scalar of the scene; parameters are
//! read from and written back to their storage precision each step.

use serde::{Deserialize, Serialize};

use crate::rasterizer::SceneGradients;
use crate::scene::{GaussianScene, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub position: f64,
    pub scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub color: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position: 0.00064,
            scale: 5e-3,
            rotation: 1e-3,
            opacity: 5e-2,
            color: 1e-2,
        }
    }
}

impl LearningRates {
    pub fn zero() -> Self {
        Self {
            position: 0.0,
            scale: 0.0,
            rotation: 0.0,
            opacity: 0.0,
            color: 0.0,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let all = [self.position, self.scale, self.rotation, self.opacity, self.color];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(crate::Error::Config(format!(
                "learning rates must be finite and non-negative, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }
}

/// First and second moments of one parameter class, `stride` scalars per primitive.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Moments {
    pub stride: usize,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    fn zeros(stride: usize, n: usize) -> Self {
        Self {
            stride,
            m: vec![0.0; stride * n],
            v: vec![0.0; stride * n],
        }
    }

    fn remap(&mut self, sources: &[Option<usize>]) {
        let s = self.stride;
        let mut m = vec![0.0; s * sources.len()];
        let mut v = vec![0.0; s * sources.len()];
        for (dst, src) in sources.iter().enumerate() {
            if let Some(src) = *src {
                m[dst * s..(dst + 1) * s].copy_from_slice(&self.m[src * s..(src + 1) * s]);
                v[dst * s..(dst + 1) * s].copy_from_slice(&self.v[src * s..(src + 1) * s]);
            }
        }
        self.m = m;
        self.v = v;
    }

    /// Updates moments in place and returns the step direction `m̂ / (√v̂ + ε)`.
    #[inline]
    fn direction(&mut self, k: usize, g: f64, cfg: &AdamConfig, bc1: f64, bc2: f64) -> f64 {
        let m = cfg.beta1 * self.m[k] + (1.0 - cfg.beta1) * g;
        let v = cfg.beta2 * self.v[k] + (1.0 - cfg.beta2) * g * g;
        self.m[k] = m;
        self.v[k] = v;
        (m / bc1) / ((v / bc2).sqrt() + cfg.eps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    /// Completed steps; drives bias correction for every primitive.
    pub step: u64,
    pub positions: Moments,
    pub log_scales: Moments,
    pub rotations: Moments,
    pub opacity_logits: Moments,
    pub colors: Moments,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// A gradient was NaN or infinite; nothing was changed.
    SkippedNonFinite,
}

impl Adam {
    pub fn new(config: AdamConfig, n: usize) -> Self {
        Self {
            config,
            step: 0,
            positions: Moments::zeros(3, n),
            log_scales: Moments::zeros(3, n),
            rotations: Moments::zeros(4, n),
            opacity_logits: Moments::zeros(1, n),
            colors: Moments::zeros(3, n),
        }
    }

    pub fn len(&self) -> usize {
        self.opacity_logits.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rebuilds moments after a topology change: entry `i` of `sources` names
    /// the old primitive whose moments the new primitive `i` inherits, or
    /// `None` for fresh zeros.
    pub fn remap(&mut self, sources: &[Option<usize>]) {
        self.positions.remap(sources);
        self.log_scales.remap(sources);
        self.rotations.remap(sources);
        self.opacity_logits.remap(sources);
        self.colors.remap(sources);
    }

    /// One update of every parameter. Rotations that moved are renormalized and
    /// colors are clamped to `[0, 1]`; untouched parameters keep their bits.
    pub fn step<T: Scalar>(
        &mut self,
        scene: &mut GaussianScene<T>,
        grads: &SceneGradients,
        lr: &LearningRates,
    ) -> StepOutcome {
        assert_eq!(scene.len(), grads.len(), "gradients misaligned with scene");
        assert_eq!(scene.len(), self.len(), "optimizer state misaligned with scene");
        if !grads.is_finite() {
            return StepOutcome::SkippedNonFinite;
        }
        self.step += 1;
        let cfg = self.config;
        let bc1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.step as i32);

        #[allow(clippy::too_many_arguments)]
        fn update<T: Scalar, const N: usize>(
            params: &mut [[T; N]],
            grads: &[[f64; N]],
            mom: &mut Moments,
            lr: f64,
            cfg: &AdamConfig,
            bc1: f64,
            bc2: f64,
            mut after: impl FnMut(&mut [T; N], bool),
        ) {
            for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                let mut moved = false;
                for c in 0..N {
                    let d = mom.direction(i * N + c, g[c], cfg, bc1, bc2);
                    let delta = lr * d;
                    if delta != 0.0 {
                        p[c] = T::from_f64(p[c].to_f64() - delta);
                        moved = true;
                    }
                }
                after(p, moved);
            }
        }

        update(&mut scene.positions, &grads.positions, &mut self.positions, lr.position, &cfg, bc1, bc2, |_, _| {});
        update(&mut scene.log_scales, &grads.log_scales, &mut self.log_scales, lr.scale, &cfg, bc1, bc2, |_, _| {});
        update(&mut scene.rotations, &grads.rotations, &mut self.rotations, lr.rotation, &cfg, bc1, bc2, |q, moved| {
            if moved {
                let v = q.map(Scalar::to_f64);
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                *q = if norm > 0.0 && norm.is_finite() {
                    v.map(|x| T::from_f64(x / norm))
                } else {
                    [1.0, 0.0, 0.0, 0.0].map(T::from_f64)
                };
            }
        });
        for (i, (p, g)) in scene.opacity_logits.iter_mut().zip(&grads.opacity_logits).enumerate() {
            let d = self.opacity_logits.direction(i, *g, &cfg, bc1, bc2);
            let delta = lr.opacity * d;
            if delta != 0.0 {
                *p = T::from_f64(p.to_f64() - delta);
            }
        }
        update(&mut scene.colors, &grads.colors, &mut self.colors, lr.color, &cfg, bc1, bc2, |c, moved| {
            if moved {
                *c = c.map(|x| T::from_f64(x.to_f64().clamp(0.0, 1.0)));
            }
        });
        StepOutcome::Applied
    }
}
