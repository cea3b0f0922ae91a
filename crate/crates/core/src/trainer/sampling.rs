use rand::Rng;

use crate::camera::Camera;
use crate::config::{Background, CameraRanges};

fn uniform<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Random orbit camera looking at the origin. Draws radius, elevation,
/// azimuth and fov in that order.
pub fn sample_orbit<R: Rng + ?Sized>(ranges: &CameraRanges, resolution: usize, rng: &mut R) -> Camera {
    let radius = uniform(rng, ranges.radius);
    let elevation = uniform(rng, ranges.elevation);
    let azimuth = rng.random_range(0.0..360.0);
    let fov = uniform(rng, ranges.fov);
    Camera::orbit(radius, elevation, azimuth, fov, resolution, resolution)
}

/// `count` cameras at the middle of every range, equally spaced in azimuth.
pub fn probe_ring(ranges: &CameraRanges, resolution: usize, count: usize) -> Vec<Camera> {
    let mid = |r: [f64; 2]| 0.5 * (r[0] + r[1]);
    (0..count)
        .map(|k| {
            Camera::orbit(
                mid(ranges.radius),
                mid(ranges.elevation),
                360.0 * k as f64 / count as f64,
                mid(ranges.fov),
                resolution,
                resolution,
            )
        })
        .collect()
}

/// Draws one gray level for the random mode; a fixed color draws nothing.
pub fn sample_background<R: Rng + ?Sized>(background: &Background, rng: &mut R) -> [f64; 3] {
    match background {
        Background::Fixed(c) => *c,
        Background::Mode(_) => [rng.random::<f64>(); 3],
    }
}

/// Background used for renders outside the training loop.
pub fn display_background(background: &Background) -> [f64; 3] {
    background.fixed().unwrap_or([0.5; 3])
}

/// Where training cameras come from.
#[derive(Debug, Clone)]
pub enum CameraSource {
    Orbit(CameraRanges),
    /// Fixed views with the ids the provider knows them by.
    Views(Vec<(u32, Camera)>),
}

impl CameraSource {
    pub fn sample<R: Rng + ?Sized>(&self, resolution: usize, rng: &mut R) -> (Option<u32>, Camera) {
        match self {
            CameraSource::Orbit(r) => (None, sample_orbit(r, resolution, rng)),
            CameraSource::Views(v) => {
                let (id, cam) = &v[rng.random_range(0..v.len())];
                (Some(*id), cam.clone())
            }
        }
    }
}
