//! Denoiser guidance: the provider contract and its implementations.
//!
//! A provider turns a rendering into an image-space loss gradient. The oracle
//! treats a stored target view as the one-step denoised image, the remote
//! client speaks the `gdp/1` wire protocol to an out-of-process model, and the
//! null provider returns zero gradients for schedule dry-runs.

mod oracle;
mod remote;
pub mod testserver;
pub mod wire;

pub use oracle::OracleProvider;
pub use remote::{RemoteConfig, RemoteProvider};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::Image;

pub const PROTOCOL: &str = "gdp/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuidanceSpace {
    Image,
    Latent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceRequest {
    pub image: Image,
    /// `u ∈ (0, 1)`.
    pub noise_fraction: f64,
    /// Seed for the provider-side noise sample ε.
    pub seed: u64,
    pub prompt: String,
    pub guidance_scale: f64,
    pub space: GuidanceSpace,
    /// Camera identifier; required by providers that hold per-view targets.
    pub view_id: Option<u32>,
}

impl GuidanceRequest {
    pub fn validate(&self) -> Result<(), GuidanceError> {
        if !(self.noise_fraction > 0.0 && self.noise_fraction < 1.0) {
            return Err(GuidanceError::InvalidRequest(format!(
                "noise fraction {} outside (0, 1)",
                self.noise_fraction
            )));
        }
        if !self.guidance_scale.is_finite() || self.guidance_scale < 0.0 {
            return Err(GuidanceError::InvalidRequest(format!(
                "guidance scale {} must be finite and non-negative",
                self.guidance_scale
            )));
        }
        if self.image.width == 0 || self.image.height == 0 {
            return Err(GuidanceError::InvalidRequest("empty image".into()));
        }
        if !self.image.is_finite() {
            return Err(GuidanceError::InvalidRequest("image has non-finite values".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceResponse {
    /// Weighted `∂loss/∂x`, same shape as the request image.
    pub grad_image: Image,
    /// One-step denoised image, clipped to `[0, 1]`.
    pub x_hat_preview: Option<Image>,
}

/// Health document served at `GET /v1/health`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Capabilities {
    pub protocol: String,
    pub space: Vec<GuidanceSpace>,
    /// Accepted square resolutions, pixels.
    pub resolution: Vec<usize>,
    #[serde(default)]
    pub preview: bool,
}

impl Capabilities {
    pub fn accepts(&self, space: GuidanceSpace, width: usize, height: usize) -> bool {
        width == height && self.space.contains(&space) && self.resolution.contains(&width)
    }
}

#[derive(Debug, Error)]
pub enum GuidanceError {
    #[error("guidance unavailable after {attempts} attempt(s): {message}")]
    Unavailable { message: String, attempts: usize },

    #[error("guidance protocol violation: {0}")]
    Protocol(String),

    #[error("guidance protocol version mismatch: expected {expected}, server speaks {found}")]
    VersionMismatch { expected: String, found: String },

    #[error("invalid guidance request: {0}")]
    InvalidRequest(String),

    #[error("guidance shape mismatch: expected {expected:?}, got {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
}

pub trait GuidanceProvider: Send + Sync {
    fn guide(&self, request: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError>;

    fn capabilities(&self) -> Capabilities;
}

/// Always returns a zero gradient and no preview.
#[derive(Debug, Clone, Default)]
pub struct NullProvider {
    pub resolutions: Vec<usize>,
}

impl GuidanceProvider for NullProvider {
    fn guide(&self, request: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError> {
        request.validate()?;
        Ok(GuidanceResponse {
            grad_image: Image::new(request.image.width, request.image.height),
            x_hat_preview: None,
        })
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            protocol: PROTOCOL.into(),
            space: vec![GuidanceSpace::Image, GuidanceSpace::Latent],
            resolution: self.resolutions.clone(),
            preview: false,
        }
    }
}
