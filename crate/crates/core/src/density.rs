//! Adaptive density control: clone, split, prune and the one-time opacity reset.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::rasterizer::{project_gaussian, SceneGradients};
use crate::scene::{logit, rotation_matrix, sigmoid, GaussianScene, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityControlConfig {
    pub densify_interval: usize,
    pub densify_start: usize,
    /// Exclusive.
    pub densify_end: usize,
    /// Mean normalized screen-space position gradient that triggers densification.
    pub grad_threshold: f64,
    /// World units; the default is 1% of the default initialization radius.
    pub split_scale_threshold: f64,
    pub split_factor: f64,
    pub prune_opacity_threshold: f64,
    /// Fraction of the image area covered by the 99% ellipse.
    pub prune_screen_area_threshold: f64,
    pub opacity_reset_iteration: usize,
    pub opacity_reset_value: f64,
    pub finetune_iterations: usize,
}

impl Default for DensityControlConfig {
    fn default() -> Self {
        Self {
            densify_interval: 500,
            densify_start: 100,
            densify_end: 12000,
            grad_threshold: 2e-4,
            split_scale_threshold: 0.01,
            split_factor: 1.6,
            prune_opacity_threshold: 0.005,
            prune_screen_area_threshold: 0.1,
            opacity_reset_iteration: 1000,
            opacity_reset_value: 0.005,
            finetune_iterations: 3000,
        }
    }
}

impl DensityControlConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("density control: {m}")));
        if self.densify_interval == 0 {
            return fail("densify_interval must be at least 1".into());
        }
        if self.densify_start >= self.densify_end {
            return fail(format!(
                "densify_start ({}) must precede densify_end ({})",
                self.densify_start, self.densify_end
            ));
        }
        // +∞ disables densification and is allowed.
        if !(self.grad_threshold > 0.0) {
            return fail(format!("grad_threshold must be positive, got {}", self.grad_threshold));
        }
        if !(self.split_scale_threshold > 0.0) {
            return fail(format!(
                "split_scale_threshold must be positive, got {}",
                self.split_scale_threshold
            ));
        }
        if !(self.split_factor > 0.0 && self.split_factor.is_finite()) {
            return fail(format!("split_factor must be positive, got {}", self.split_factor));
        }
        if !(self.prune_opacity_threshold > 0.0 && self.prune_screen_area_threshold > 0.0) {
            return fail("prune thresholds must be positive".into());
        }
        if !(self.opacity_reset_value > 0.0 && self.opacity_reset_value < 1.0) {
            return fail(format!(
                "opacity_reset_value must lie in (0, 1), got {}",
                self.opacity_reset_value
            ));
        }
        Ok(())
    }

    pub fn should_densify(&self, iteration: usize) -> bool {
        (self.densify_start..self.densify_end).contains(&iteration)
            && (iteration - self.densify_start) % self.densify_interval == 0
    }

    pub fn should_reset_opacity(&self, iteration: usize) -> bool {
        iteration == self.opacity_reset_iteration
    }

    /// Every event the schedule fires in `[0, total_iterations)`, in order.
    pub fn scheduled_events(&self, total_iterations: usize) -> Vec<(usize, EventKind)> {
        let mut out = Vec::new();
        for i in 0..total_iterations {
            if self.should_densify(i) {
                out.push((i, EventKind::Densify));
                out.push((i, EventKind::Prune));
            }
            if self.should_reset_opacity(i) {
                out.push((i, EventKind::Reset));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Densify,
    Prune,
    Reset,
}

/// One line of the density-control event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEvent {
    pub iteration: usize,
    pub kind: EventKind,
    #[serde(default)]
    pub cloned: usize,
    #[serde(default)]
    pub split: usize,
    #[serde(default)]
    pub pruned: usize,
    #[serde(default)]
    pub reset: usize,
    pub n_before: usize,
    pub n_after: usize,
}

impl DensityEvent {
    fn new(iteration: usize, kind: EventKind, n_before: usize, n_after: usize) -> Self {
        Self {
            iteration,
            kind,
            cloned: 0,
            split: 0,
            pruned: 0,
            reset: 0,
            n_before,
            n_after,
        }
    }
}

/// Per-primitive accumulators between densify events.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GradStats {
    pub accum_norm: Vec<f64>,
    pub count: Vec<u32>,
    /// Summed world-space position gradient; sets the clone offset direction.
    pub accum_position_grad: Vec<[f64; 3]>,
}

impl GradStats {
    pub fn new(n: usize) -> Self {
        Self {
            accum_norm: vec![0.0; n],
            count: vec![0; n],
            accum_position_grad: vec![[0.0; 3]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.count.len()
    }

    pub fn is_empty(&self) -> bool {
        self.count.is_empty()
    }

    /// Records one view. The pixel-space mean gradient is rescaled to
    /// normalized device coordinates and divided by the number of image
    /// values, so the threshold does not depend on resolution.
    pub fn observe(&mut self, grads: &SceneGradients, width: usize, height: usize) {
        assert_eq!(grads.len(), self.len(), "gradient statistics misaligned");
        let norm = 1.0 / (3.0 * (width * height) as f64);
        let (sx, sy) = (0.5 * width as f64, 0.5 * height as f64);
        for i in 0..grads.len() {
            if !grads.visible[i] {
                continue;
            }
            let [gx, gy] = grads.mean2d[i];
            self.accum_norm[i] += (gx * sx).hypot(gy * sy) * norm;
            self.count[i] += 1;
            for c in 0..3 {
                self.accum_position_grad[i][c] += grads.positions[i][c];
            }
        }
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.accum_norm[i] / self.count[i] as f64
        }
    }

    /// Rebuilds the accumulators after a topology change; see [`crate::optim::Adam::remap`].
    pub fn remap(&mut self, sources: &[Option<usize>]) {
        let mut out = GradStats::new(sources.len());
        for (dst, src) in sources.iter().enumerate() {
            if let Some(s) = *src {
                out.accum_norm[dst] = self.accum_norm[s];
                out.count[dst] = self.count[s];
                out.accum_position_grad[dst] = self.accum_position_grad[s];
            }
        }
        *self = out;
    }
}

/// Result of a topology change. `sources[i]` is the old index primitive `i`
/// inherits optimizer state from, or `None` for a newly created primitive.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologyChange {
    pub sources: Vec<Option<usize>>,
    pub event: DensityEvent,
}

/// Clones small and splits large primitives whose mean gradient reaches the
/// threshold. Survivors keep their order; clones and split children are
/// appended in parent order. `clone_step` is the world-space offset length of a
/// clone along the negative accumulated gradient sign.
pub fn densify<T: Scalar, R: Rng + ?Sized>(
    scene: &mut GaussianScene<T>,
    stats: &GradStats,
    config: &DensityControlConfig,
    clone_step: f64,
    iteration: usize,
    rng: &mut R,
) -> Result<TopologyChange> {
    let n = scene.len();
    if stats.len() != n {
        return Err(Error::Internal(format!(
            "gradient statistics cover {} primitives, scene has {n}",
            stats.len()
        )));
    }
    let mut out = GaussianScene::<T>::with_capacity(n);
    let mut sources = Vec::with_capacity(n);
    let mut appended = GaussianScene::<T>::new();
    let mut appended_sources = Vec::new();
    let (mut cloned, mut split) = (0, 0);
    let shrink = config.split_factor.ln();

    for i in 0..n {
        if !(stats.mean(i) >= config.grad_threshold) {
            out.push_from(scene, i);
            sources.push(Some(i));
            continue;
        }
        let scale = scene.scale(i);
        let max_scale = scale.iter().cloned().fold(f64::MIN, f64::max);
        if max_scale > config.split_scale_threshold {
            let r = rotation_matrix(scene.rotation(i));
            let mu = Vector3::from(scene.position(i));
            let log_scale = scene.log_scales[i].map(|v| v.to_f64() - shrink);
            for _ in 0..2 {
                let z = Vector3::from_fn(|k, _| scale[k] * rng.sample::<f64, _>(StandardNormal));
                let p = mu + r * z;
                appended.push_raw(
                    [p.x, p.y, p.z],
                    log_scale,
                    scene.rotation(i),
                    scene.opacity_logits[i].to_f64(),
                    scene.color(i),
                );
                appended_sources.push(None);
            }
            split += 1;
        } else {
            out.push_from(scene, i);
            sources.push(Some(i));
            let g = stats.accum_position_grad[i];
            let p = scene.position(i);
            let moved = [0, 1, 2].map(|c| p[c] - clone_step * signum0(g[c]));
            appended.push_raw(
                moved,
                scene.log_scales[i].map(Scalar::to_f64),
                scene.rotation(i),
                scene.opacity_logits[i].to_f64(),
                scene.color(i),
            );
            appended_sources.push(None);
            cloned += 1;
        }
    }
    for k in 0..appended.len() {
        out.push_from(&appended, k);
    }
    sources.extend(appended_sources);
    let mut event = DensityEvent::new(iteration, EventKind::Densify, n, out.len());
    event.cloned = cloned;
    event.split = split;
    *scene = out;
    Ok(TopologyChange { sources, event })
}

fn signum0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Removes nearly transparent primitives and those whose 99% footprint exceeds
/// the area threshold in any probe camera. The most opaque primitive survives
/// when every primitive qualifies.
pub fn prune<T: Scalar>(
    scene: &mut GaussianScene<T>,
    config: &DensityControlConfig,
    cameras: &[Camera],
    low_pass: f64,
    iteration: usize,
) -> TopologyChange {
    let n = scene.len();
    let mut keep: Vec<bool> = (0..n)
        .map(|i| {
            if scene.opacity(i) < config.prune_opacity_threshold {
                return false;
            }
            let Ok(cov) = scene.covariance(i) else {
                return false;
            };
            let pos = Vector3::from(scene.position(i));
            !cameras.iter().any(|cam| {
                let limit = config.prune_screen_area_threshold * (cam.width * cam.height) as f64;
                project_gaussian(&pos, &cov, cam, low_pass).is_some_and(|p| p.area99() > limit)
            })
        })
        .collect();
    if n > 0 && !keep.iter().any(|&k| k) {
        let best = (0..n)
            .max_by(|&a, &b| scene.opacity(a).total_cmp(&scene.opacity(b)).then(b.cmp(&a)))
            .expect("non-empty");
        keep[best] = true;
    }
    let sources: Vec<Option<usize>> = (0..n).filter(|&i| keep[i]).map(Some).collect();
    scene.retain_mask(&keep);
    let mut event = DensityEvent::new(iteration, EventKind::Prune, n, scene.len());
    event.pruned = n - scene.len();
    TopologyChange { sources, event }
}

/// Sets every opacity to `min(current, value)` through the logit. The stored
/// logit is stepped down until its opacity does not exceed `value`.
pub fn reset_opacity<T: Scalar>(scene: &mut GaussianScene<T>, value: f64, iteration: usize) -> DensityEvent {
    let mut target = T::from_f64(logit(value));
    while sigmoid(target.to_f64()) > value {
        target = target.next_down();
    }
    let mut changed = 0;
    for l in &mut scene.opacity_logits {
        if sigmoid(l.to_f64()) > value {
            *l = target;
            changed += 1;
        }
    }
    let mut event = DensityEvent::new(iteration, EventKind::Reset, scene.len(), scene.len());
    event.reset = changed;
    event
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one(scale: f64, opacity: f64) -> GaussianScene<f32> {
        let mut s = GaussianScene::new();
        s.push_natural([0.1, 0.2, 0.3], [scale; 3], [0.8, 0.0, 0.6, 0.0], opacity, [0.2, 0.4, 0.6]);
        s
    }

    fn hot_stats(n: usize) -> GradStats {
        let mut st = GradStats::new(n);
        for i in 0..n {
            st.accum_norm[i] = 1.0;
            st.count[i] = 1;
            st.accum_position_grad[i] = [1.0, -1.0, 0.0];
        }
        st
    }

    #[test]
    fn densify_schedule() {
        let c = DensityControlConfig::default();
        assert!(!c.should_densify(99));
        assert!(c.should_densify(100));
        assert!(c.should_densify(600));
        assert!(!c.should_densify(601));
        assert!(c.should_densify(11600));
        assert!(!c.should_densify(12000));
        assert!(!c.should_densify(12100));
        assert!(c.should_reset_opacity(1000));
        let ev = c.scheduled_events(15000);
        let densify: Vec<usize> = ev.iter().filter(|e| e.1 == EventKind::Densify).map(|e| e.0).collect();
        assert_eq!(densify, (0..24).map(|k| 100 + 500 * k).collect::<Vec<_>>());
    }

    #[test]
    fn below_threshold_is_a_no_op() {
        let mut s = one(0.5, 0.5);
        let before = s.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ch = densify(&mut s, &GradStats::new(1), &DensityControlConfig::default(), 1e-3, 100, &mut rng)
            .unwrap();
        assert_eq!(s, before);
        assert_eq!((ch.event.cloned, ch.event.split), (0, 0));
        assert_eq!(ch.sources, vec![Some(0)]);
    }

    #[test]
    fn large_primitive_splits_into_two() {
        let mut s = one(0.5, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ch = densify(&mut s, &hot_stats(1), &DensityControlConfig::default(), 1e-3, 100, &mut rng)
            .unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(ch.event.split, 1);
        assert_eq!(ch.sources, vec![None, None]);
        for i in 0..2 {
            for k in 0..3 {
                assert!((s.scale(i)[k] - 0.5 / 1.6).abs() < 1e-6);
            }
            assert_eq!(s.color(i), one(0.5, 0.5).color(0));
            assert!((s.opacity(i) - 0.5).abs() < 1e-6);
        }
        assert_ne!(s.positions[0], s.positions[1]);
    }

    #[test]
    fn small_primitive_clones_with_offset() {
        let mut s = one(0.001, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ch = densify(&mut s, &hot_stats(1), &DensityControlConfig::default(), 1e-3, 100, &mut rng)
            .unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(ch.event.cloned, 1);
        assert_eq!(ch.sources, vec![Some(0), None]);
        s.validate(1e-6).unwrap();
        let d = [0, 1, 2].map(|c| s.positions[1][c] as f64 - s.positions[0][c] as f64);
        assert!((d[0] + 1e-3).abs() < 1e-7 && (d[1] - 1e-3).abs() < 1e-7 && d[2] == 0.0);
    }

    #[test]
    fn misaligned_stats_error() {
        let mut s = one(0.5, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = densify(&mut s, &GradStats::new(2), &DensityControlConfig::default(), 1e-3, 0, &mut rng);
        assert!(matches!(r, Err(Error::Internal(_))));
    }

    #[test]
    fn prune_rules() {
        let cam = Camera::orbit(3.0, 0.0, 0.0, 50.0, 32, 32);
        let cfg = DensityControlConfig::default();
        let mut s = one(0.01, 0.001);
        s.push_natural([0.0; 3], [0.01; 3], [1.0, 0.0, 0.0, 0.0], 0.5, [0.5; 3]);
        s.push_natural([0.0; 3], [2.0; 3], [1.0, 0.0, 0.0, 0.0], 0.5, [0.5; 3]);
        let ch = prune(&mut s, &cfg, std::slice::from_ref(&cam), 0.3, 600);
        assert_eq!(s.len(), 1);
        assert_eq!(ch.sources, vec![Some(1)]);
        assert_eq!(ch.event.pruned, 2);

        let mut lone = one(0.01, 0.001);
        prune(&mut lone, &cfg, &[cam], 0.3, 600);
        assert_eq!(lone.len(), 1);
    }

    #[test]
    fn reset_uses_min_rule_and_is_idempotent() {
        let mut s = one(0.1, 0.8);
        s.push_natural([0.0; 3], [0.1; 3], [1.0, 0.0, 0.0, 0.0], 0.001, [0.5; 3]);
        let low = s.opacity_logits[1];
        reset_opacity(&mut s, 0.005, 1000);
        assert!(s.opacity(0) <= 0.005 && s.opacity(0) > 0.005 * (1.0 - 1e-6));
        assert_eq!(s.opacity_logits[1], low);
        let once = s.clone();
        let ev = reset_opacity(&mut s, 0.005, 1000);
        assert_eq!(s, once);
        assert_eq!(ev.reset, 0);
    }

    #[test]
    fn stats_observe_normalizes_and_skips_invisible() {
        let mut g = SceneGradients::zeros(2);
        g.visible = vec![true, false];
        g.mean2d = vec![[3.0, 4.0], [1.0, 1.0]];
        let mut st = GradStats::new(2);
        st.observe(&g, 2, 2);
        // (3·1, 4·1) has norm 5, divided by 3·2·2 values.
        assert!((st.mean(0) - 5.0 / 12.0).abs() < 1e-15);
        assert_eq!(st.count, vec![1, 0]);
        assert_eq!(st.mean(1), 0.0);
    }
}
