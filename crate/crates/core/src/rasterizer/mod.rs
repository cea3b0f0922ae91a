//! Differentiable Gaussian rasterizer.
//!
//! Primitives are projected to screen-space Gaussians, sorted front to back by
//! camera depth (index breaks ties), and alpha-composited per pixel center
//! `(i + 0.5, j + 0.5)`:
//!
//! ```text
//! α_i(x) = min(σ_i exp(−½ (x−μ_i)ᵀ Σ_i⁻¹ (x−μ_i)), α_max)
//! C(x)   = Σ_i c_i α_i(x) Π_{j<i} (1 − α_j(x)) + T_final · background
//! ```
//!
//! Pixels are processed in square tiles in parallel; every tile is reduced in
//! a fixed order so results are deterministic.

mod backward;
mod project;

pub use backward::SceneGradients;
pub use project::{pinhole, pinhole_jacobian, project_gaussian, Projected, Q99};

use nalgebra::{Matrix2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::image::Image;
use crate::scene::{rotation_matrix, GaussianScene, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSettings {
    /// Added to both diagonal entries of every screen-space covariance, px².
    pub low_pass: f64,
    /// Per-splat alphas below this are skipped. Zero evaluates every splat at
    /// every pixel.
    pub min_alpha: f64,
    /// Upper clamp on a single splat's alpha.
    pub max_alpha: f64,
    /// Compositing stops once transmittance falls below this.
    pub min_transmittance: f64,
    pub tile_size: usize,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            low_pass: 0.3,
            min_alpha: 1.0 / 255.0,
            max_alpha: 0.999,
            min_transmittance: 1e-4,
            tile_size: 16,
        }
    }
}

impl RenderSettings {
    /// Settings for finite-difference comparisons: no dilation and a
    /// negligible alpha cutoff, so the image is smooth in every parameter.
    pub fn exact() -> Self {
        Self {
            low_pass: 0.0,
            min_alpha: 1e-14,
            ..Self::default()
        }
    }
}

/// Screen-space splat ready for compositing.
#[derive(Debug, Clone, PartialEq)]
pub struct Splat2D {
    pub mean2d: [f64; 2],
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
    pub color: [f64; 3],
    pub opacity: f64,
    pub source_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub image: Image,
    /// Accumulated opacity `1 − T_final` per pixel, row-major.
    pub alpha_map: Vec<f64>,
    pub splat_count: usize,
}

/// Per-splat data shared by the forward and backward passes.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    pub splat: Splat2D,
    pub projected: Projected,
    /// Inverse covariance (a, b, c): q = a dx² + 2 b dx dy + c dy².
    pub conic: [f64; 3],
    /// Inclusive pixel range `[x0, x1] × [y0, y1]`.
    pub bbox: [usize; 4],
    /// Unit quaternion and its pre-normalization norm.
    pub quat: [f64; 4],
    pub quat_norm: f64,
    pub rot: nalgebra::Matrix3<f64>,
    pub variances: [f64; 3],
}

/// One splat's participation in one pixel.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Contribution {
    pub splat: u32,
    pub alpha: f64,
    /// Gaussian falloff `exp(−q/2)`.
    pub falloff: f64,
    pub clamped: bool,
    /// Transmittance in front of this splat.
    pub transmittance: f64,
    pub dx: f64,
    pub dy: f64,
}

pub(crate) struct Binned {
    pub splats: Vec<Prepared>,
    pub tiles_x: usize,
    /// Per tile, indices into `splats` in compositing order.
    pub tiles: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, Default)]
pub struct Rasterizer {
    pub settings: RenderSettings,
}

impl Rasterizer {
    pub fn new(settings: RenderSettings) -> Self {
        Self { settings }
    }

    /// Projects and sorts the scene; culled primitives are omitted.
    pub fn splats<T: Scalar>(&self, scene: &GaussianScene<T>, camera: &Camera) -> Vec<Splat2D> {
        self.prepare(scene, camera)
            .into_iter()
            .map(|p| p.splat)
            .collect()
    }

    pub(crate) fn prepare<T: Scalar>(
        &self,
        scene: &GaussianScene<T>,
        camera: &Camera,
    ) -> Vec<Prepared> {
        let s = &self.settings;
        let (w, h) = (camera.width, camera.height);
        let mut out: Vec<Prepared> = (0..scene.len())
            .into_par_iter()
            .filter_map(|i| {
                let q_raw = scene.rotation(i);
                let quat_norm = q_raw.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !(quat_norm > 0.0) || !quat_norm.is_finite() {
                    return None;
                }
                let quat = q_raw.map(|v| v / quat_norm);
                let rot = rotation_matrix(quat);
                let variances = scene.log_scales[i].map(|l| (2.0 * l.to_f64()).exp());
                let cov3d = rot
                    * nalgebra::Matrix3::from_diagonal(&Vector3::from(variances))
                    * rot.transpose();
                let position = Vector3::from(scene.position(i));
                let projected = project_gaussian(&position, &cov3d, camera, s.low_pass)?;
                let opacity = scene.opacity(i);
                if opacity < s.min_alpha {
                    return None;
                }
                let c = projected.cov2d;
                let det = c.determinant();
                let conic = [c[(1, 1)] / det, -c[(0, 1)] / det, c[(0, 0)] / det];

                let (mx, my) = (projected.mean2d.x, projected.mean2d.y);
                let bbox = if s.min_alpha > 0.0 {
                    let q_cut = 2.0 * (opacity / s.min_alpha).ln();
                    let ex = (q_cut * c[(0, 0)]).sqrt();
                    let ey = (q_cut * c[(1, 1)]).sqrt();
                    pixel_range(mx - ex, mx + ex, w).zip(pixel_range(my - ey, my + ey, h))
                } else {
                    Some(((0, w - 1), (0, h - 1)))
                };
                let ((x0, x1), (y0, y1)) = bbox?;
                Some(Prepared {
                    splat: Splat2D {
                        mean2d: [mx, my],
                        cov2d: c,
                        depth: projected.depth,
                        color: scene.color(i),
                        opacity,
                        source_index: i,
                    },
                    projected,
                    conic,
                    bbox: [x0, x1, y0, y1],
                    quat,
                    quat_norm,
                    rot,
                    variances,
                })
            })
            .collect();
        out.sort_by(|a, b| {
            a.splat
                .depth
                .total_cmp(&b.splat.depth)
                .then(a.splat.source_index.cmp(&b.splat.source_index))
        });
        out
    }

    pub(crate) fn bin<T: Scalar>(&self, scene: &GaussianScene<T>, camera: &Camera) -> Binned {
        let splats = self.prepare(scene, camera);
        let ts = self.settings.tile_size.max(1);
        let tiles_x = camera.width.div_ceil(ts);
        let tiles_y = camera.height.div_ceil(ts);
        let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
        for (k, p) in splats.iter().enumerate() {
            let [x0, x1, y0, y1] = p.bbox;
            for ty in y0 / ts..=y1 / ts {
                for tx in x0 / ts..=x1 / ts {
                    tiles[ty * tiles_x + tx].push(k as u32);
                }
            }
        }
        Binned {
            splats,
            tiles_x,
            tiles,
        }
    }

    /// Walks the splats covering pixel `(px, py)` front to back, pushing every
    /// contributing splat, and returns `(color before background, T_final)`.
    #[inline]
    pub(crate) fn composite_pixel(
        &self,
        px: usize,
        py: usize,
        list: &[u32],
        splats: &[Prepared],
        contributions: &mut Vec<Contribution>,
    ) -> ([f64; 3], f64) {
        let s = &self.settings;
        let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
        let mut t = 1.0;
        let mut rgb = [0.0; 3];
        contributions.clear();
        for &k in list {
            let p = &splats[k as usize];
            let [x0, x1, y0, y1] = p.bbox;
            if px < x0 || px > x1 || py < y0 || py > y1 {
                continue;
            }
            let dx = x - p.splat.mean2d[0];
            let dy = y - p.splat.mean2d[1];
            let [a, b, c] = p.conic;
            let q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
            let falloff = (-0.5 * q).exp();
            let raw = p.splat.opacity * falloff;
            if raw < s.min_alpha {
                continue;
            }
            let clamped = raw > s.max_alpha;
            let alpha = if clamped { s.max_alpha } else { raw };
            let weight = alpha * t;
            for ch in 0..3 {
                rgb[ch] += p.splat.color[ch] * weight;
            }
            contributions.push(Contribution {
                splat: k,
                alpha,
                falloff,
                clamped,
                transmittance: t,
                dx,
                dy,
            });
            t *= 1.0 - alpha;
            if t < s.min_transmittance {
                break;
            }
        }
        (rgb, t)
    }

    pub fn render<T: Scalar>(&self, scene: &GaussianScene<T>, camera: &Camera) -> RenderOutput {
        let binned = self.bin(scene, camera);
        let ts = self.settings.tile_size.max(1);
        let (w, h) = (camera.width, camera.height);
        let bg = camera.background;

        let tile_pixels: Vec<Vec<(usize, [f64; 3], f64)>> = (0..binned.tiles.len())
            .into_par_iter()
            .map(|tile| {
                let (tx, ty) = (tile % binned.tiles_x, tile / binned.tiles_x);
                let list = &binned.tiles[tile];
                let mut scratch = Vec::new();
                let mut out = Vec::with_capacity(ts * ts);
                for py in ty * ts..((ty + 1) * ts).min(h) {
                    for px in tx * ts..((tx + 1) * ts).min(w) {
                        let (rgb, t) =
                            self.composite_pixel(px, py, list, &binned.splats, &mut scratch);
                        out.push((py * w + px, rgb, t));
                    }
                }
                out
            })
            .collect();

        let mut image = Image::new(w, h);
        let mut alpha_map = vec![0.0; w * h];
        for (pix, rgb, t) in tile_pixels.into_iter().flatten() {
            for ch in 0..3 {
                image.data[pix * 3 + ch] = rgb[ch] + t * bg[ch];
            }
            alpha_map[pix] = 1.0 - t;
        }
        RenderOutput {
            image,
            alpha_map,
            splat_count: binned.splats.len(),
        }
    }
}

/// Pixel indices whose centers fall in `[lo, hi]`, clipped to `[0, n)`.
fn pixel_range(lo: f64, hi: f64, n: usize) -> Option<(usize, usize)> {
    let first = (lo - 0.5).ceil().max(0.0);
    let last = (hi - 0.5).floor().min(n as f64 - 1.0);
    if !(first <= last) {
        return None;
    }
    Some((first as usize, last as usize))
}

/// Splats of `scene` as seen by `camera` with default settings.
pub fn render<T: Scalar>(scene: &GaussianScene<T>, camera: &Camera) -> RenderOutput {
    Rasterizer::default().render(scene, camera)
}

#[cfg(test)]
mod tests;
