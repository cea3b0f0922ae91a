//! Score-distillation optimization of anisotropic 3D Gaussian scenes.

pub mod annealing;
pub mod camera;
pub mod config;
pub mod density;
pub mod diffusion;
pub mod error;
pub mod guidance;
pub mod image;
pub mod optim;
pub mod ply;
pub mod rasterizer;
pub mod scene;
pub mod trainer;

pub use error::{Error, Result};
