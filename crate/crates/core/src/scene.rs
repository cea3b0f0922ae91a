//! The learnable Gaussian scene and its derived geometry.
//!
//! Parameters are stored unconstrained: scales as logs, opacities as logits,
//! rotations as (w, x, y, z) quaternions that the optimizer renormalizes after
//! every step. Colors are diffuse RGB.

use std::fmt::Debug;

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Storage precision of scene parameters.
///
/// Training keeps `f32` (bit-exact through PLY); gradient checks use `f64`.
/// All math runs in `f64` regardless.
pub trait Scalar: Copy + Debug + Default + PartialEq + Send + Sync + 'static {
    fn to_f64(self) -> f64;
    fn from_f64(value: f64) -> Self;
    /// Largest representable value below `self`.
    fn next_down(self) -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f64(value: f64) -> Self {
        value as f32
    }
    #[inline]
    fn next_down(self) -> Self {
        f32::next_down(self)
    }
}

impl Scalar for f64 {
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_f64(value: f64) -> Self {
        value
    }
    #[inline]
    fn next_down(self) -> Self {
        f64::next_down(self)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianScene<T: Scalar = f32> {
    pub positions: Vec<[T; 3]>,
    pub log_scales: Vec<[T; 3]>,
    /// Unit quaternions, (w, x, y, z).
    pub rotations: Vec<[T; 4]>,
    pub opacity_logits: Vec<T>,
    pub colors: Vec<[T; 3]>,
}

impl<T: Scalar> GaussianScene<T> {
    pub fn new() -> Self {
        Self {
            positions: Vec::new(),
            log_scales: Vec::new(),
            rotations: Vec::new(),
            opacity_logits: Vec::new(),
            colors: Vec::new(),
        }
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            positions: Vec::with_capacity(n),
            log_scales: Vec::with_capacity(n),
            rotations: Vec::with_capacity(n),
            opacity_logits: Vec::with_capacity(n),
            colors: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Appends one primitive given in natural units (opacity in (0,1), linear scales).
    pub fn push_natural(
        &mut self,
        position: [f64; 3],
        scale: [f64; 3],
        rotation: [f64; 4],
        opacity: f64,
        color: [f64; 3],
    ) {
        self.push_raw(
            position,
            scale.map(f64::ln),
            rotation,
            logit(opacity),
            color,
        );
    }

    pub fn push_raw(
        &mut self,
        position: [f64; 3],
        log_scale: [f64; 3],
        rotation: [f64; 4],
        opacity_logit: f64,
        color: [f64; 3],
    ) {
        self.positions.push(position.map(T::from_f64));
        self.log_scales.push(log_scale.map(T::from_f64));
        self.rotations.push(rotation.map(T::from_f64));
        self.opacity_logits.push(T::from_f64(opacity_logit));
        self.colors.push(color.map(T::from_f64));
    }

    /// Copies primitive `index` of `other` onto the end of `self`.
    pub fn push_from(&mut self, other: &Self, index: usize) {
        self.positions.push(other.positions[index]);
        self.log_scales.push(other.log_scales[index]);
        self.rotations.push(other.rotations[index]);
        self.opacity_logits.push(other.opacity_logits[index]);
        self.colors.push(other.colors[index]);
    }

    pub fn opacity(&self, index: usize) -> f64 {
        sigmoid(self.opacity_logits[index].to_f64())
    }

    pub fn scale(&self, index: usize) -> [f64; 3] {
        self.log_scales[index].map(|s| s.to_f64().exp())
    }

    pub fn position(&self, index: usize) -> [f64; 3] {
        self.positions[index].map(Scalar::to_f64)
    }

    pub fn rotation(&self, index: usize) -> [f64; 4] {
        self.rotations[index].map(Scalar::to_f64)
    }

    pub fn color(&self, index: usize) -> [f64; 3] {
        self.colors[index].map(Scalar::to_f64)
    }

    pub fn covariance(&self, index: usize) -> Result<Matrix3<f64>> {
        compute_cov3d(
            self.log_scales[index].map(Scalar::to_f64),
            self.rotation(index),
        )
    }

    /// Converts the storage precision.
    pub fn cast<U: Scalar>(&self) -> GaussianScene<U> {
        fn conv<T: Scalar, U: Scalar, const N: usize>(v: &[[T; N]]) -> Vec<[U; N]> {
            v.iter().map(|a| a.map(|x| U::from_f64(x.to_f64()))).collect()
        }
        GaussianScene {
            positions: conv(&self.positions),
            log_scales: conv(&self.log_scales),
            rotations: conv(&self.rotations),
            opacity_logits: self
                .opacity_logits
                .iter()
                .map(|x| U::from_f64(x.to_f64()))
                .collect(),
            colors: conv(&self.colors),
        }
    }

    /// Checks the structural invariants: equal lengths, finite values,
    /// unit quaternions within `quat_tol`.
    pub fn validate(&self, quat_tol: f64) -> Result<()> {
        let n = self.len();
        if self.log_scales.len() != n
            || self.rotations.len() != n
            || self.opacity_logits.len() != n
            || self.colors.len() != n
        {
            return Err(Error::Internal(format!(
                "scene arrays disagree in length: positions={} log_scales={} rotations={} opacity={} colors={}",
                n,
                self.log_scales.len(),
                self.rotations.len(),
                self.opacity_logits.len(),
                self.colors.len()
            )));
        }
        for i in 0..n {
            let finite = self.positions[i].iter().all(|v| v.to_f64().is_finite())
                && self.log_scales[i].iter().all(|v| v.to_f64().is_finite())
                && self.rotations[i].iter().all(|v| v.to_f64().is_finite())
                && self.opacity_logits[i].to_f64().is_finite()
                && self.colors[i].iter().all(|v| v.to_f64().is_finite());
            if !finite {
                return Err(Error::InvalidParameter(format!(
                    "primitive {i} has a non-finite field"
                )));
            }
            let q = self.rotation(i);
            let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > quat_tol {
                return Err(Error::InvalidParameter(format!(
                    "primitive {i} quaternion norm {norm} is not unit"
                )));
            }
        }
        Ok(())
    }

    /// Renormalizes every quaternion to unit length.
    pub fn normalize_rotations(&mut self) {
        for q in &mut self.rotations {
            let v = q.map(Scalar::to_f64);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            *q = if norm > 0.0 && norm.is_finite() {
                v.map(|x| T::from_f64(x / norm))
            } else {
                [1.0, 0.0, 0.0, 0.0].map(T::from_f64)
            };
        }
    }

    /// Keeps only the primitives whose mask entry is `true`.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        fn filter<V: Copy>(v: &mut Vec<V>, keep: &[bool]) {
            let mut i = 0;
            v.retain(|_| {
                let k = keep[i];
                i += 1;
                k
            });
        }
        filter(&mut self.positions, keep);
        filter(&mut self.log_scales, keep);
        filter(&mut self.rotations, keep);
        filter(&mut self.opacity_logits, keep);
        filter(&mut self.colors, keep);
    }
}

/// Rotation matrix of a (w, x, y, z) quaternion. The input is normalized first.
pub fn rotation_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / norm);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// World-space covariance `R S Sᵀ Rᵀ` with `S = diag(exp(log_scale))`.
pub fn compute_cov3d(log_scale: [f64; 3], rotation: [f64; 4]) -> Result<Matrix3<f64>> {
    if !log_scale.iter().chain(rotation.iter()).all(|v| v.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "non-finite covariance input: log_scale={log_scale:?} rotation={rotation:?}"
        )));
    }
    let qnorm = rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
    if qnorm == 0.0 {
        return Err(Error::InvalidParameter("zero quaternion".into()));
    }
    let r = rotation_matrix(rotation);
    let var = log_scale.map(|s| (2.0 * s).exp());
    let mut out = Matrix3::zeros();
    for i in 0..3 {
        for j in i..3 {
            let v = (0..3).map(|k| r[(i, k)] * var[k] * r[(j, k)]).sum::<f64>();
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// Initial opacity at distance `r` from the origin: linear from `max` at the
/// center to `min` at `radius`.
pub fn initial_opacity(r: f64, radius: f64, opacity_max: f64, opacity_min: f64) -> f64 {
    let frac = (r / radius).clamp(0.0, 1.0);
    // Convex form is exact at both endpoints.
    (1.0 - frac) * opacity_max + frac * opacity_min
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneInit {
    pub n_points: usize,
    pub radius: f64,
    pub opacity_max: f64,
    pub opacity_min: f64,
    pub seed: u64,
}

impl Default for SceneInit {
    fn default() -> Self {
        Self {
            n_points: 1000,
            radius: 1.0,
            opacity_max: 0.3,
            opacity_min: 0.02,
            seed: 0,
        }
    }
}

impl SceneInit {
    /// Per-axis standard deviation: half the mean spacing of `n_points` in the ball.
    pub fn initial_scale(&self) -> f64 {
        0.5 * self.radius / (self.n_points as f64).cbrt()
    }
}

/// Samples a random scene: positions uniform in the ball, opacity decaying
/// linearly with distance from the origin, uniform random colors.
pub fn init_scene<T: Scalar>(init: &SceneInit) -> Result<GaussianScene<T>> {
    if init.n_points == 0 {
        return Err(Error::InvalidParameter("n_points must be at least 1".into()));
    }
    if !(init.radius > 0.0 && init.radius.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "radius must be positive, got {}",
            init.radius
        )));
    }
    if !(0.0 < init.opacity_min && init.opacity_min <= init.opacity_max && init.opacity_max < 1.0)
    {
        return Err(Error::InvalidParameter(format!(
            "need 0 < opacity_min <= opacity_max < 1, got min={} max={}",
            init.opacity_min, init.opacity_max
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(init.seed);
    let log_scale = init.initial_scale().ln();
    let mut scene = GaussianScene::with_capacity(init.n_points);
    for _ in 0..init.n_points {
        let dir = loop {
            let d: [f64; 3] = [
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ];
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            if n > 1e-12 {
                break d.map(|v| v / n);
            }
        };
        let r = init.radius * rng.random::<f64>().cbrt();
        let position = dir.map(|v| v * r);
        let opacity = initial_opacity(r, init.radius, init.opacity_max, init.opacity_min);
        let color = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
        scene.push_raw(
            position,
            [log_scale; 3],
            [1.0, 0.0, 0.0, 0.0],
            logit(opacity),
            color,
        );
    }
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_1_SQRT_2, LN_2};

    fn assert_mat_close(a: &Matrix3<f64>, b: &Matrix3<f64>, tol: f64) {
        for i in 0..3 {
            for j in 0..3 {
                assert!(
                    (a[(i, j)] - b[(i, j)]).abs() <= tol,
                    "mismatch at ({i},{j}): {} vs {}\n{a}\n{b}",
                    a[(i, j)],
                    b[(i, j)]
                );
            }
        }
    }

    #[test]
    fn cov3d_identity() {
        let c = compute_cov3d([0.0; 3], [1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_mat_close(&c, &Matrix3::identity(), 1e-15);
    }

    #[test]
    fn cov3d_axis_scaling() {
        let c = compute_cov3d([LN_2, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_mat_close(&c, &Matrix3::from_diagonal(&[4.0, 1.0, 1.0].into()), 1e-12);
    }

    #[test]
    fn cov3d_quarter_turn_about_z_permutes_axes() {
        let q = [FRAC_1_SQRT_2, 0.0, 0.0, FRAC_1_SQRT_2];
        let c = compute_cov3d([0.0, LN_2, 3f64.ln()], q).unwrap();
        assert_mat_close(&c, &Matrix3::from_diagonal(&[4.0, 1.0, 9.0].into()), 1e-12);
    }

    #[test]
    fn cov3d_rejects_non_finite() {
        assert!(matches!(
            compute_cov3d([f64::NAN, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]),
            Err(Error::InvalidParameter(_))
        ));
        assert!(compute_cov3d([0.0; 3], [f64::INFINITY, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn opacity_decay_endpoints() {
        assert_eq!(initial_opacity(0.0, 2.0, 0.3, 0.02), 0.3);
        assert_eq!(initial_opacity(2.0, 2.0, 0.3, 0.02), 0.02);
        assert!((initial_opacity(1.0, 2.0, 0.3, 0.02) - 0.16).abs() < 1e-15);
    }

    #[test]
    fn init_scene_default_count_and_ranges() {
        let init = SceneInit::default();
        let scene: GaussianScene<f32> = init_scene(&init).unwrap();
        assert_eq!(scene.len(), 1000);
        scene.validate(1e-6).unwrap();
        for i in 0..scene.len() {
            let p = scene.position(i);
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            assert!(r <= init.radius + 1e-6);
            let o = scene.opacity(i);
            let expected = initial_opacity(r, init.radius, init.opacity_max, init.opacity_min);
            assert!((o - expected).abs() < 1e-5, "{o} vs {expected}");
            assert!(scene.color(i).iter().all(|c| (0.0..=1.0).contains(c)));
            let s = scene.scale(i);
            assert!((s[0] - init.initial_scale()).abs() < 1e-6);
        }
    }

    #[test]
    fn init_scene_is_seed_deterministic() {
        let init = SceneInit {
            n_points: 64,
            seed: 7,
            ..SceneInit::default()
        };
        let a: GaussianScene<f32> = init_scene(&init).unwrap();
        let b: GaussianScene<f32> = init_scene(&init).unwrap();
        assert_eq!(a, b);
        let c: GaussianScene<f32> = init_scene(&SceneInit { seed: 8, ..init }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_scene_rejects_bad_parameters() {
        let bad = [
            SceneInit {
                n_points: 0,
                ..SceneInit::default()
            },
            SceneInit {
                radius: 0.0,
                ..SceneInit::default()
            },
            SceneInit {
                opacity_min: 0.5,
                opacity_max: 0.3,
                ..SceneInit::default()
            },
        ];
        for init in bad {
            assert!(matches!(
                init_scene::<f32>(&init),
                Err(Error::InvalidParameter(_))
            ));
        }
    }

    #[test]
    fn retain_mask_keeps_fields_aligned() {
        let mut s = GaussianScene::<f64>::new();
        for i in 0..4 {
            let v = i as f64;
            s.push_raw([v; 3], [v; 3], [1.0, 0.0, 0.0, 0.0], v, [v; 3]);
        }
        s.retain_mask(&[true, false, true, false]);
        assert_eq!(s.len(), 2);
        assert_eq!(s.opacity_logits, vec![0.0, 2.0]);
        assert_eq!(s.colors[1], [2.0; 3]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn quat() -> impl Strategy<Value = [f64; 4]> {
            prop::array::uniform4(-1.0f64..1.0).prop_filter("non-degenerate", |q| {
                q.iter().map(|v| v * v).sum::<f64>() > 1e-3
            })
        }

        proptest! {
            #[test]
            fn sign_flip_invariance(ls in prop::array::uniform3(-3.0f64..1.0), q in quat()) {
                let a = compute_cov3d(ls, q).unwrap();
                let b = compute_cov3d(ls, q.map(|v| -v)).unwrap();
                prop_assert_eq!(a, b);
            }

            #[test]
            fn determinant_and_eigenvalues(ls in prop::array::uniform3(-3.0f64..1.0), q in quat()) {
                let c = compute_cov3d(ls, q).unwrap();
                prop_assert!((c - c.transpose()).abs().max() == 0.0);
                let det = c.determinant();
                let expected = (2.0 * (ls[0] + ls[1] + ls[2])).exp();
                prop_assert!(((det - expected) / expected).abs() < 1e-9, "{} vs {}", det, expected);
                let mut eig: Vec<f64> = c.symmetric_eigenvalues().iter().copied().collect();
                let mut want: Vec<f64> = ls.iter().map(|s| (2.0 * s).exp()).collect();
                eig.sort_by(f64::total_cmp);
                want.sort_by(f64::total_cmp);
                for (e, w) in eig.iter().zip(&want) {
                    prop_assert!((e - w).abs() < 1e-9 * w.max(1.0), "{} vs {}", e, w);
                }
            }
        }
    }
}
