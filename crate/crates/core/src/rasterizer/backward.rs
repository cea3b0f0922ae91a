use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use super::{Prepared, Rasterizer};
use crate::camera::Camera;
use crate::image::Image;
use crate::scene::{GaussianScene, Scalar};

/// Gradients of a scalar loss with respect to every scene parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGradients {
    pub positions: Vec<[f64; 3]>,
    pub log_scales: Vec<[f64; 3]>,
    pub rotations: Vec<[f64; 4]>,
    pub opacity_logits: Vec<f64>,
    pub colors: Vec<[f64; 3]>,
    /// Loss gradient with respect to the screen-space mean, pixels.
    pub mean2d: Vec<[f64; 2]>,
    /// Whether the primitive survived culling in this view.
    pub visible: Vec<bool>,
}

impl SceneGradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            positions: vec![[0.0; 3]; n],
            log_scales: vec![[0.0; 3]; n],
            rotations: vec![[0.0; 4]; n],
            opacity_logits: vec![0.0; n],
            colors: vec![[0.0; 3]; n],
            mean2d: vec![[0.0; 2]; n],
            visible: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        fn fin<const N: usize>(v: &[[f64; N]]) -> bool {
            v.iter().flatten().all(|x| x.is_finite())
        }
        fin(&self.positions)
            && fin(&self.log_scales)
            && fin(&self.rotations)
            && fin(&self.colors)
            && fin(&self.mean2d)
            && self.opacity_logits.iter().all(|x| x.is_finite())
    }

    /// Flattened view in the fixed order positions, log-scales, rotations,
    /// opacity logits, colors.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * 14);
        out.extend(self.positions.iter().flatten());
        out.extend(self.log_scales.iter().flatten());
        out.extend(self.rotations.iter().flatten());
        out.extend(&self.opacity_logits);
        out.extend(self.colors.iter().flatten());
        out
    }
}

/// Per-splat accumulators in screen space.
#[derive(Debug, Clone, Copy, Default)]
struct Grad2D {
    mean: [f64; 2],
    /// Full-matrix gradient of the conic: [∂/∂A₀₀, ∂/∂A₀₁ (= ∂/∂A₁₀), ∂/∂A₁₁].
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
}

impl Grad2D {
    fn add(&mut self, o: &Grad2D) {
        for k in 0..2 {
            self.mean[k] += o.mean[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
    }
}

impl Rasterizer {
    /// Backpropagates `d_loss_d_image` (same layout as the rendered image)
    /// through compositing, projection and the parametrization.
    pub fn render_backward<T: Scalar>(
        &self,
        scene: &GaussianScene<T>,
        camera: &Camera,
        d_loss_d_image: &Image,
    ) -> SceneGradients {
        assert_eq!(
            (d_loss_d_image.width, d_loss_d_image.height),
            (camera.width, camera.height),
            "image gradient does not match the camera resolution"
        );
        let binned = self.bin(scene, camera);
        let ts = self.settings.tile_size.max(1);
        let (w, h) = (camera.width, camera.height);
        let bg = camera.background;
        let splats = &binned.splats;

        let per_tile: Vec<Vec<(u32, Grad2D)>> = (0..binned.tiles.len())
            .into_par_iter()
            .map(|tile| {
                let (tx, ty) = (tile % binned.tiles_x, tile / binned.tiles_x);
                let list = &binned.tiles[tile];
                let mut local = vec![Grad2D::default(); list.len()];
                let slot_of = |k: u32| list.binary_search(&k).expect("splat in tile list");
                let mut contributions = Vec::new();
                for py in ty * ts..((ty + 1) * ts).min(h) {
                    for px in tx * ts..((tx + 1) * ts).min(w) {
                        let o = (py * w + px) * 3;
                        let dl = [
                            d_loss_d_image.data[o],
                            d_loss_d_image.data[o + 1],
                            d_loss_d_image.data[o + 2],
                        ];
                        if dl == [0.0; 3] {
                            continue;
                        }
                        let (_, t_final) =
                            self.composite_pixel(px, py, list, splats, &mut contributions);
                        // Color composited behind the current splat, background included.
                        let mut behind = bg.map(|b| b * t_final);
                        for c in contributions.iter().rev() {
                            let p = &splats[c.splat as usize];
                            let g = &mut local[slot_of(c.splat)];
                            let weight = c.alpha * c.transmittance;
                            let mut d_alpha = 0.0;
                            for ch in 0..3 {
                                let col = p.splat.color[ch];
                                g.color[ch] += dl[ch] * weight;
                                d_alpha += dl[ch]
                                    * (col * c.transmittance - behind[ch] / (1.0 - c.alpha));
                                behind[ch] += col * weight;
                            }
                            if c.clamped {
                                continue;
                            }
                            let sigma = p.splat.opacity;
                            g.opacity += d_alpha * c.falloff;
                            let d_q = -0.5 * d_alpha * sigma * c.falloff;
                            let [a, b, cc] = p.conic;
                            // q = dᵀ A d with d = x − μ, so ∂q/∂μ = −2 A d.
                            g.mean[0] += d_q * -2.0 * (a * c.dx + b * c.dy);
                            g.mean[1] += d_q * -2.0 * (b * c.dx + cc * c.dy);
                            g.conic[0] += d_q * c.dx * c.dx;
                            g.conic[1] += d_q * c.dx * c.dy;
                            g.conic[2] += d_q * c.dy * c.dy;
                        }
                    }
                }
                list.iter().copied().zip(local).collect()
            })
            .collect();

        let mut grads2d = vec![Grad2D::default(); splats.len()];
        for tile in &per_tile {
            for (k, g) in tile {
                grads2d[*k as usize].add(g);
            }
        }

        let mut out = SceneGradients::zeros(scene.len());
        for (p, g) in splats.iter().zip(&grads2d) {
            chain_to_scene(p, g, camera, &mut out);
        }
        out
    }
}

fn chain_to_scene(p: &Prepared, g: &Grad2D, camera: &Camera, out: &mut SceneGradients) {
    let i = p.splat.source_index;
    out.visible[i] = true;
    out.colors[i] = g.color;
    out.mean2d[i] = g.mean;
    let sigma = p.splat.opacity;
    out.opacity_logits[i] = g.opacity * sigma * (1.0 - sigma);

    // Conic -> screen covariance: A = Σ⁻¹ ⇒ ∂L/∂Σ = −A (∂L/∂A) A.
    let [a, b, c] = p.conic;
    let conic = Matrix2::new(a, b, b, c);
    let g_conic = Matrix2::new(g.conic[0], g.conic[1], g.conic[1], g.conic[2]);
    let g_cov2d = -(conic * g_conic * conic);

    // Σ₂ = J M Jᵀ + λI.
    let j: &Matrix2x3<f64> = &p.projected.jacobian;
    let m: &Matrix3<f64> = &p.projected.cov_cam;
    let g_m = j.transpose() * g_cov2d * j;
    let g_j = 2.0 * g_cov2d * j * m;

    // M = W Σ₃ Wᵀ.
    let wr = &camera.rotation;
    let g_cov3d = wr.transpose() * g_m * wr;

    // Σ₃ = R D Rᵀ with D = diag(exp(2 s)).
    let r = &p.rot;
    let d = p.variances;
    let rgr = r.transpose() * g_cov3d * r;
    for k in 0..3 {
        out.log_scales[i][k] = 2.0 * d[k] * rgr[(k, k)];
    }
    let mut g_r = 2.0 * g_cov3d * r;
    for k in 0..3 {
        for row in 0..3 {
            g_r[(row, k)] *= d[k];
        }
    }
    out.rotations[i] = quaternion_gradient(p.quat, p.quat_norm, &g_r);

    // Mean and Jacobian both depend on the camera-space center.
    let pc = &p.projected.p_cam;
    let (fx, fy) = (camera.fx, camera.fy);
    let iz = 1.0 / pc.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let gm = Vector2::new(g.mean[0], g.mean[1]);
    let mut g_pc: Vector3<f64> = j.transpose() * gm;
    g_pc.x += g_j[(0, 2)] * (-fx * iz2);
    g_pc.y += g_j[(1, 2)] * (-fy * iz2);
    g_pc.z += g_j[(0, 0)] * (-fx * iz2)
        + g_j[(0, 2)] * (2.0 * fx * pc.x * iz3)
        + g_j[(1, 1)] * (-fy * iz2)
        + g_j[(1, 2)] * (2.0 * fy * pc.y * iz3);
    let g_pos = wr.transpose() * g_pc;
    out.positions[i] = [g_pos.x, g_pos.y, g_pos.z];
}

/// Pulls `∂L/∂R` back to the raw (unnormalized) quaternion.
fn quaternion_gradient(q: [f64; 4], norm: f64, g: &Matrix3<f64>) -> [f64; 4] {
    let [w, x, y, z] = q;
    let gw = 2.0
        * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
            + x * g[(2, 1)]);
    let gx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let gy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let gz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    let gq = [gw, gx, gy, gz];
    // Normalization Jacobian (I − q̂q̂ᵀ)/|q| projects onto the sphere's tangent.
    let dot: f64 = gq.iter().zip(&q).map(|(a, b)| a * b).sum();
    [0, 1, 2, 3].map(|k| (gq[k] - q[k] * dot) / norm)
}
