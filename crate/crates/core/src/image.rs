use std::path::Path;

use crate::error::{Error, Result};

/// Row-major interleaved RGB image with `f64` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::InvalidParameter(format!(
                "image data has {} values, expected {}x{}x3",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let o = (y * self.width + x) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let o = (y * self.width + x) * 3;
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn clamped(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    /// Places `self` and `right` next to each other; heights must agree.
    pub fn side_by_side(&self, right: &Image) -> Result<Image> {
        if self.height != right.height {
            return Err(Error::InvalidParameter(format!(
                "side-by-side needs equal heights, got {} and {}",
                self.height, right.height
            )));
        }
        let width = self.width + right.width;
        let mut out = Image::new(width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.set_pixel(x, y, self.pixel(x, y));
            }
            for x in 0..right.width {
                out.set_pixel(self.width + x, y, right.pixel(x, y));
            }
        }
        Ok(out)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.to_rgb8())
            .ok_or_else(|| Error::Internal("image buffer size mismatch".into()))?;
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?
            .to_rgb8();
        let data = img.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
        Image::from_data(img.width() as usize, img.height() as usize, data)
    }
}

pub fn mse(a: &Image, b: &Image) -> f64 {
    assert!(a.same_shape(b), "mse on images of different shape");
    let n = a.data.len().max(1) as f64;
    a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n
}

/// Peak signal-to-noise ratio in dB for signals in [0,1].
pub fn psnr(a: &Image, b: &Image) -> f64 {
    let m = mse(a, b);
    if m == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * m.log10()
    }
}
