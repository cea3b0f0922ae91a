//! Forward diffusion, one-step denoising, classifier-free guidance and the
//! two equivalent forms of the score-distillation image gradient.
//!
//! The noise residual form `w(t)(ε̂ − ε)` and the reconstruction form
//! `β(t)(x − x̂)` with `β(t) = w(t)√ᾱ_t/√(1−ᾱ_t)` are implemented separately;
//! their agreement is checked in the tests and the acceptance suite.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `ᾱ_t` at or below this makes the one-step denoiser blow up.
pub const ALPHA_BAR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
}

/// Serialized form, `{T, beta_start, beta_end, kind}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseScheduleSpec {
    #[serde(rename = "T")]
    pub num_timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub kind: ScheduleKind,
}

impl Default for NoiseScheduleSpec {
    fn default() -> Self {
        Self {
            num_timesteps: 1000,
            beta_start: 8.5e-4,
            beta_end: 1.2e-2,
            kind: ScheduleKind::Linear,
        }
    }
}

/// Fixed variance schedule; `ᾱ_t = Π_{s≤t} (1 − β_s)` for `t ∈ [1, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NoiseScheduleSpec", into = "NoiseScheduleSpec")]
pub struct NoiseSchedule {
    spec: NoiseScheduleSpec,
    alpha_bar: Vec<f64>,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::new(NoiseScheduleSpec::default()).expect("default schedule is valid")
    }
}

impl TryFrom<NoiseScheduleSpec> for NoiseSchedule {
    type Error = Error;
    fn try_from(spec: NoiseScheduleSpec) -> Result<Self> {
        Self::new(spec)
    }
}

impl From<NoiseSchedule> for NoiseScheduleSpec {
    fn from(s: NoiseSchedule) -> Self {
        s.spec
    }
}

impl NoiseSchedule {
    pub fn new(spec: NoiseScheduleSpec) -> Result<Self> {
        let NoiseScheduleSpec {
            num_timesteps: n,
            beta_start,
            beta_end,
            ..
        } = spec;
        if n < 2 {
            return Err(Error::Config(format!("schedule needs T >= 2, got {n}")));
        }
        let ok = |b: f64| b > 0.0 && b < 1.0;
        if !ok(beta_start) || !ok(beta_end) {
            return Err(Error::Config(format!(
                "betas must lie in (0,1), got {beta_start}..{beta_end}"
            )));
        }
        let mut alpha_bar = Vec::with_capacity(n);
        let mut acc = 1.0;
        for i in 0..n {
            let beta = beta_start + (beta_end - beta_start) * i as f64 / (n - 1) as f64;
            acc *= 1.0 - beta;
            alpha_bar.push(acc);
        }
        Ok(Self { spec, alpha_bar })
    }

    pub fn spec(&self) -> &NoiseScheduleSpec {
        &self.spec
    }

    pub fn num_timesteps(&self) -> usize {
        self.alpha_bar.len()
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        if t == 0 || t > self.alpha_bar.len() {
            return Err(Error::InvalidParameter(format!(
                "timestep {t} outside [1, {}]",
                self.alpha_bar.len()
            )));
        }
        Ok(self.alpha_bar[t - 1])
    }

    /// Maps a noise fraction `u ∈ (0,1)` to `t = round(u·T)`, clamped to `[1, T]`.
    pub fn timestep(&self, u: f64) -> usize {
        let n = self.alpha_bar.len();
        ((u * n as f64).round() as usize).clamp(1, n)
    }

    pub fn level(&self, t: usize) -> Result<NoiseLevel> {
        Ok(NoiseLevel {
            t,
            alpha_bar: self.alpha_bar(t)?,
        })
    }

    pub fn level_at_fraction(&self, u: f64) -> NoiseLevel {
        self.level(self.timestep(u)).expect("timestep is clamped")
    }
}

/// A timestep together with its `ᾱ_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseLevel {
    pub t: usize,
    pub alpha_bar: f64,
}

impl NoiseLevel {
    /// A level not tied to a schedule (reported as `t = 0` in errors).
    pub fn from_alpha_bar(alpha_bar: f64) -> Self {
        Self { t: 0, alpha_bar }
    }

    fn check(&self) -> Result<()> {
        if !(self.alpha_bar > ALPHA_BAR_FLOOR) || !(self.alpha_bar < 1.0) {
            return Err(Error::DegenerateTimestep {
                t: self.t,
                alpha_bar: self.alpha_bar,
                floor: ALPHA_BAR_FLOOR,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdsWeights {
    #[default]
    ConstantOne,
    OneMinusAlphaBar,
}

impl SdsWeights {
    pub fn weight(&self, level: NoiseLevel) -> f64 {
        match self {
            SdsWeights::ConstantOne => 1.0,
            SdsWeights::OneMinusAlphaBar => 1.0 - level.alpha_bar,
        }
    }

    /// Scale of the equivalent L2 loss, `w(t)√ᾱ_t/√(1−ᾱ_t)`.
    pub fn l2_scale(&self, level: NoiseLevel) -> Result<f64> {
        level.check()?;
        let ab = level.alpha_bar;
        Ok(self.weight(level) * ab.sqrt() / (1.0 - ab).sqrt())
    }
}

fn same_len(a: &[f64], b: &[f64]) {
    assert_eq!(a.len(), b.len(), "diffusion operands differ in length");
}

/// `x_t = √ᾱ x + √(1−ᾱ) ε`.
pub fn add_noise(x: &[f64], eps: &[f64], level: NoiseLevel) -> Vec<f64> {
    same_len(x, eps);
    let a = level.alpha_bar.sqrt();
    let b = (1.0 - level.alpha_bar).sqrt();
    x.iter().zip(eps).map(|(x, e)| a * x + b * e).collect()
}

/// `x̂ = (x_t − √(1−ᾱ) ε̂) / √ᾱ`.
pub fn denoise_one_step(x_t: &[f64], eps_hat: &[f64], level: NoiseLevel) -> Result<Vec<f64>> {
    same_len(x_t, eps_hat);
    if !(level.alpha_bar > ALPHA_BAR_FLOOR) {
        return Err(Error::DegenerateTimestep {
            t: level.t,
            alpha_bar: level.alpha_bar,
            floor: ALPHA_BAR_FLOOR,
        });
    }
    let a = level.alpha_bar.sqrt();
    let b = (1.0 - level.alpha_bar).sqrt();
    Ok(x_t
        .iter()
        .zip(eps_hat)
        .map(|(xt, e)| (xt - b * e) / a)
        .collect())
}

/// Classifier-free guidance: `ε_u + s (ε_c − ε_u)`.
pub fn apply_cfg(eps_uncond: &[f64], eps_cond: &[f64], scale: f64) -> Vec<f64> {
    same_len(eps_uncond, eps_cond);
    eps_uncond
        .iter()
        .zip(eps_cond)
        .map(|(u, c)| u + scale * (c - u))
        .collect()
}

/// Noise-residual form of the image gradient, `w(t)(ε̂ − ε)`.
pub fn sds_gradient(eps_hat: &[f64], eps: &[f64], level: NoiseLevel, weights: SdsWeights) -> Vec<f64> {
    same_len(eps_hat, eps);
    let w = weights.weight(level);
    eps_hat.iter().zip(eps).map(|(h, e)| w * (h - e)).collect()
}

/// Reconstruction form of the image gradient, `β(t)(x − x̂)`.
pub fn l2_reparam_gradient(
    x: &[f64],
    x_hat: &[f64],
    level: NoiseLevel,
    weights: SdsWeights,
) -> Result<Vec<f64>> {
    same_len(x, x_hat);
    let beta = weights.l2_scale(level)?;
    Ok(x.iter().zip(x_hat).map(|(a, b)| beta * (a - b)).collect())
}
