//! Pinhole cameras. Camera space follows the OpenCV convention: x right,
//! y down, z forward. World space is y-up.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// World-to-camera rotation.
    pub rotation: Matrix3<f64>,
    /// World-to-camera translation.
    pub translation: Vector3<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub near_clip: f64,
    pub background: [f64; 3],
}

pub const DEFAULT_NEAR_CLIP: f64 = 0.01;

impl Camera {
    /// Camera at `eye` looking at `target`, square pixels, principal point at
    /// the image center, vertical field of view `fov_y_deg`.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        fov_y_deg: f64,
        width: usize,
        height: usize,
    ) -> Self {
        let forward = (target - eye).normalize();
        let mut up = Vector3::y();
        if forward.cross(&up).norm() < 1e-9 {
            up = Vector3::z();
        }
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        let fy = 0.5 * height as f64 / (0.5 * fov_y_deg.to_radians()).tan();
        Self {
            rotation,
            translation,
            fx: fy,
            fy,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
            near_clip: DEFAULT_NEAR_CLIP,
            background: [0.0; 3],
        }
    }

    /// Camera on a sphere of `radius` around the origin, looking at it.
    /// Azimuth 0 looks down -z; elevation is positive above the xz-plane.
    pub fn orbit(
        radius: f64,
        elevation_deg: f64,
        azimuth_deg: f64,
        fov_y_deg: f64,
        width: usize,
        height: usize,
    ) -> Self {
        Self::look_at(
            orbit_eye(radius, elevation_deg, azimuth_deg),
            Vector3::zeros(),
            fov_y_deg,
            width,
            height,
        )
    }

    pub fn with_background(mut self, background: [f64; 3]) -> Self {
        self.background = background;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 1 || self.height < 1 {
            return Err(Error::InvalidParameter(format!(
                "camera resolution must be at least 1x1, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            )));
        }
        if !(self.near_clip > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "near_clip must be positive, got {}",
                self.near_clip
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Camera center in world coordinates.
    pub fn eye(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

pub fn orbit_eye(radius: f64, elevation_deg: f64, azimuth_deg: f64) -> Vector3<f64> {
    let (el, az) = (elevation_deg.to_radians(), azimuth_deg.to_radians());
    Vector3::new(
        radius * el.cos() * az.sin(),
        radius * el.sin(),
        radius * el.cos() * az.cos(),
    )
}
