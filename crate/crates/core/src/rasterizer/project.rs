use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::camera::Camera;

/// Mahalanobis radius² enclosing 99% of a 2D Gaussian's mass: −2 ln(0.01).
pub const Q99: f64 = 9.210_340_371_976_184;

/// Screen-space footprint of one primitive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
    /// Camera-space center.
    pub p_cam: Vector3<f64>,
    /// Jacobian of the pinhole map at `p_cam`.
    pub jacobian: Matrix2x3<f64>,
    /// Covariance rotated into camera space, `W Σ Wᵀ`.
    pub cov_cam: Matrix3<f64>,
}

impl Projected {
    /// Area in pixels² of the ellipse holding 99% of the mass.
    pub fn area99(&self) -> f64 {
        std::f64::consts::PI * Q99 * self.cov2d.determinant().max(0.0).sqrt()
    }
}

pub fn pinhole_jacobian(p: &Vector3<f64>, camera: &Camera) -> Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    Matrix2x3::new(
        camera.fx * iz,
        0.0,
        -camera.fx * p.x * iz * iz,
        0.0,
        camera.fy * iz,
        -camera.fy * p.y * iz * iz,
    )
}

pub fn pinhole(p: &Vector3<f64>, camera: &Camera) -> Vector2<f64> {
    Vector2::new(
        camera.fx * p.x / p.z + camera.cx,
        camera.fy * p.y / p.z + camera.cy,
    )
}

/// Projects a world-space Gaussian with the local affine approximation
/// `J W Σ Wᵀ Jᵀ + low_pass·I`.
///
/// Returns `None` when the center is at or in front of the near plane, the
/// projected covariance is not positive definite, or the 99% ellipse's
/// bounding box misses the image entirely.
pub fn project_gaussian(
    position: &Vector3<f64>,
    cov3d: &Matrix3<f64>,
    camera: &Camera,
    low_pass: f64,
) -> Option<Projected> {
    let p_cam = camera.world_to_camera(position);
    if !(p_cam.z > camera.near_clip) {
        return None;
    }
    let jacobian = pinhole_jacobian(&p_cam, camera);
    let cov_cam = camera.rotation * cov3d * camera.rotation.transpose();
    let mut cov2d = jacobian * cov_cam * jacobian.transpose();
    // Exact symmetry keeps the conic symmetric.
    let off = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
    cov2d[(0, 1)] = off;
    cov2d[(1, 0)] = off;
    cov2d[(0, 0)] += low_pass;
    cov2d[(1, 1)] += low_pass;

    let det = cov2d.determinant();
    if !(det > 0.0 && cov2d[(0, 0)] > 0.0) || !det.is_finite() {
        return None;
    }
    let mean2d = pinhole(&p_cam, camera);
    let ex = (Q99 * cov2d[(0, 0)]).sqrt();
    let ey = (Q99 * cov2d[(1, 1)]).sqrt();
    if mean2d.x + ex < 0.0
        || mean2d.x - ex > camera.width as f64
        || mean2d.y + ey < 0.0
        || mean2d.y - ey > camera.height as f64
    {
        return None;
    }
    Some(Projected {
        mean2d,
        cov2d,
        depth: p_cam.z,
        p_cam,
        jacobian,
        cov_cam,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::compute_cov3d;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn axis_camera() -> Camera {
        let mut cam = Camera::look_at(
            Vector3::zeros(),
            Vector3::new(0.0, 0.0, 1.0),
            60.0,
            64,
            64,
        );
        cam.fx = 100.0;
        cam.fy = 100.0;
        cam
    }

    #[test]
    fn on_axis_unit_covariance() {
        let cam = axis_camera();
        let p = project_gaussian(&Vector3::new(0.0, 0.0, 2.0), &Matrix3::identity(), &cam, 0.0)
            .unwrap();
        assert!((p.mean2d - Vector2::new(cam.cx, cam.cy)).norm() < 1e-12);
        assert!((p.cov2d - Matrix2::new(2500.0, 0.0, 0.0, 2500.0)).norm() < 1e-9);
        assert_eq!(p.depth, 2.0);
    }

    #[test]
    fn low_pass_dilates_diagonal() {
        let cam = axis_camera();
        let a = project_gaussian(&Vector3::new(0.0, 0.0, 2.0), &Matrix3::identity(), &cam, 0.0)
            .unwrap();
        let b = project_gaussian(&Vector3::new(0.0, 0.0, 2.0), &Matrix3::identity(), &cam, 0.3)
            .unwrap();
        assert!((b.cov2d - a.cov2d - Matrix2::identity() * 0.3).norm() < 1e-12);
    }

    #[test]
    fn near_plane_culls() {
        let cam = axis_camera();
        let z = cam.near_clip / 2.0;
        assert!(project_gaussian(&Vector3::new(0.0, 0.0, z), &Matrix3::identity(), &cam, 0.0)
            .is_none());
        assert!(
            project_gaussian(&Vector3::new(0.0, 0.0, -1.0), &Matrix3::identity(), &cam, 0.0)
                .is_none()
        );
    }

    #[test]
    fn off_screen_culls() {
        let cam = axis_camera();
        let tiny = Matrix3::identity() * 1e-6;
        assert!(project_gaussian(&Vector3::new(50.0, 0.0, 2.0), &tiny, &cam, 0.0).is_none());
        assert!(project_gaussian(&Vector3::new(0.0, 0.0, 2.0), &tiny, &cam, 0.0).is_some());
    }

    /// The affine covariance must use the derivative of the actual projection map.
    #[test]
    fn covariance_uses_numerical_jacobian() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let cam = Camera::orbit(
                rng.random_range(2.0..4.0),
                rng.random_range(-10.0..45.0),
                rng.random_range(0.0..360.0),
                rng.random_range(40.0..70.0),
                32,
                32,
            );
            let pos = Vector3::new(
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
            );
            let q = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            let ls = [
                rng.random_range(-3.0..-1.0),
                rng.random_range(-3.0..-1.0),
                rng.random_range(-3.0..-1.0),
            ];
            let cov = compute_cov3d(ls, q).unwrap();
            let proj = project_gaussian(&pos, &cov, &cam, 0.0).unwrap();

            // Jacobian of world position -> pixel, by central differences.
            let h = 1e-6;
            let mut jw = Matrix2x3::zeros();
            for k in 0..3 {
                let mut a = pos;
                let mut b = pos;
                a[k] += h;
                b[k] -= h;
                let d = (pinhole(&cam.world_to_camera(&a), &cam)
                    - pinhole(&cam.world_to_camera(&b), &cam))
                    / (2.0 * h);
                jw.set_column(k, &d);
            }
            let expected = jw * cov * jw.transpose();
            let rel = (proj.cov2d - expected).norm() / expected.norm();
            assert!(rel < 1e-4, "relative error {rel}");
        }
    }
}
