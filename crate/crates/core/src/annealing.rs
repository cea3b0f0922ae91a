//! Piecewise-linear bounds on the sampled noise fraction `u`, narrowing over
//! the course of training.
//!
//! The default breakpoints and the constant presets are engineering choices;
//! no published values exist for them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `(p, u_lo, u_hi)`; serialized as a bare triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Breakpoint {
    pub p: f64,
    pub lo: f64,
    pub hi: f64,
}

impl From<[f64; 3]> for Breakpoint {
    fn from([p, lo, hi]: [f64; 3]) -> Self {
        Self { p, lo, hi }
    }
}

impl From<Breakpoint> for [f64; 3] {
    fn from(b: Breakpoint) -> Self {
        [b.p, b.lo, b.hi]
    }
}

/// Constant-bounds schedules for comparing fixed noise ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundsPreset {
    Annealed,
    FixedLow,
    FixedMid,
    FixedHigh,
    FixedWide,
}

impl BoundsPreset {
    pub const ALL: [BoundsPreset; 5] = [
        BoundsPreset::Annealed,
        BoundsPreset::FixedLow,
        BoundsPreset::FixedMid,
        BoundsPreset::FixedHigh,
        BoundsPreset::FixedWide,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            BoundsPreset::Annealed => "annealed",
            BoundsPreset::FixedLow => "fixed_low",
            BoundsPreset::FixedMid => "fixed_mid",
            BoundsPreset::FixedHigh => "fixed_high",
            BoundsPreset::FixedWide => "fixed_wide",
        }
    }

    pub fn schedule(&self) -> NoiseBoundSchedule {
        match self {
            BoundsPreset::Annealed => Ok(NoiseBoundSchedule::default()),
            BoundsPreset::FixedLow => NoiseBoundSchedule::constant(0.02, 0.25),
            BoundsPreset::FixedMid => NoiseBoundSchedule::constant(0.25, 0.50),
            BoundsPreset::FixedHigh => NoiseBoundSchedule::constant(0.50, 0.98),
            BoundsPreset::FixedWide => NoiseBoundSchedule::constant(0.02, 0.98),
        }
        .expect("preset bounds are valid")
    }
}

impl std::str::FromStr for BoundsPreset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|p| p.name()).collect();
                Error::Config(format!("unknown bounds preset {s:?}; expected one of {names:?}"))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Breakpoint>", into = "Vec<Breakpoint>")]
pub struct NoiseBoundSchedule {
    breakpoints: Vec<Breakpoint>,
}

impl Default for NoiseBoundSchedule {
    fn default() -> Self {
        Self::new(vec![
            [0.0, 0.02, 0.98].into(),
            [0.3, 0.02, 0.98].into(),
            [1.0, 0.02, 0.50].into(),
        ])
        .expect("default schedule is valid")
    }
}

impl TryFrom<Vec<Breakpoint>> for NoiseBoundSchedule {
    type Error = Error;
    fn try_from(b: Vec<Breakpoint>) -> Result<Self> {
        Self::new(b)
    }
}

impl From<NoiseBoundSchedule> for Vec<Breakpoint> {
    fn from(s: NoiseBoundSchedule) -> Self {
        s.breakpoints
    }
}

impl NoiseBoundSchedule {
    /// Requires at least two breakpoints, `p` strictly increasing from 0 to 1,
    /// `0 < lo ≤ hi < 1`, and width `hi − lo` non-increasing.
    pub fn new(breakpoints: Vec<Breakpoint>) -> Result<Self> {
        let bad = |msg: String| Err(Error::Config(format!("noise bound schedule: {msg}")));
        if breakpoints.len() < 2 {
            return bad(format!("need at least 2 breakpoints, got {}", breakpoints.len()));
        }
        let first = breakpoints[0].p;
        let last = breakpoints[breakpoints.len() - 1].p;
        if first != 0.0 || last != 1.0 {
            return bad(format!("p must run from 0 to 1, got {first}..{last}"));
        }
        for (k, b) in breakpoints.iter().enumerate() {
            if !(b.lo > 0.0 && b.lo <= b.hi && b.hi < 1.0) {
                return bad(format!("breakpoint {k} needs 0 < lo <= hi < 1, got ({}, {})", b.lo, b.hi));
            }
        }
        for (k, w) in breakpoints.windows(2).enumerate() {
            if !(w[1].p > w[0].p) {
                return bad(format!("p not strictly increasing at breakpoint {}", k + 1));
            }
            if w[1].hi - w[1].lo > w[0].hi - w[0].lo {
                return bad(format!("range widens at breakpoint {}", k + 1));
            }
        }
        Ok(Self { breakpoints })
    }

    pub fn constant(lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![[0.0, lo, hi].into(), [1.0, lo, hi].into()])
    }

    pub fn breakpoints(&self) -> &[Breakpoint] {
        &self.breakpoints
    }

    /// Bounds at training fraction `p`, clamped to `[0, 1]`.
    pub fn bounds_at_fraction(&self, p: f64) -> (f64, f64) {
        let p = p.clamp(0.0, 1.0);
        let b = &self.breakpoints;
        let k = b.partition_point(|bp| bp.p <= p).clamp(1, b.len() - 1);
        let (a, c) = (b[k - 1], b[k]);
        let s = (p - a.p) / (c.p - a.p);
        (a.lo + s * (c.lo - a.lo), a.hi + s * (c.hi - a.hi))
    }

    pub fn bounds_at(&self, iteration: usize, total_iterations: usize) -> (f64, f64) {
        self.bounds_at_fraction(iteration as f64 / total_iterations.max(1) as f64)
    }

    /// `u ~ U[u_lo, u_hi]` at the given iteration.
    pub fn sample<R: Rng + ?Sized>(&self, iteration: usize, total_iterations: usize, rng: &mut R) -> f64 {
        let (lo, hi) = self.bounds_at(iteration, total_iterations);
        if lo == hi {
            return lo;
        }
        // Clamp guards the upper endpoint against rounding in lo + r·(hi − lo).
        (lo + rng.random::<f64>() * (hi - lo)).clamp(lo, hi)
    }
}
