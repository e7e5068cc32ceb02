//! RGB images with f64 channels in [0,1], plus 8-bit PNG I/O.

use std::path::Path;

use hng_tensor::Tensor;

use crate::error::{Error, Result};

/// Row-major, channel-interleaved (H×W×3) image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Image> {
        if data.len() != width * height * 3 {
            return Err(Error::contract(format!(
                "{width}×{height} image needs {} values, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, color: [f64; 3]) -> Image {
        Image {
            width,
            height,
            data: color.repeat(width * height),
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn from_tensor(t: &Tensor) -> Result<Image> {
        match t.shape() {
            &[h, w, 3] => Image::new(w, h, t.to_vec()),
            s => Err(Error::contract(format!("expected H×W×3 tensor, got {s:?}"))),
        }
    }

    /// Constant `[H×W×3]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.height, self.width, 3], self.data.clone())
            .expect("image shape is consistent")
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Box-filter downsampling by an integer factor.
    pub fn downsample(&self, factor: usize) -> Result<Image> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            return Err(Error::contract(format!(
                "cannot downsample {}×{} by {factor}",
                self.width, self.height
            )));
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let mut out = vec![0.0; w * h * 3];
        let norm = 1.0 / (factor * factor) as f64;
        for y in 0..self.height {
            for x in 0..self.width {
                let dst = ((y / factor) * w + x / factor) * 3;
                let src = (y * self.width + x) * 3;
                for c in 0..3 {
                    out[dst + c] += self.data[src + c] * norm;
                }
            }
        }
        Image::new(w, h, out)
    }

    /// Horizontal strip of equally sized frames.
    pub fn hstack(frames: &[Image]) -> Result<Image> {
        let first = frames
            .first()
            .ok_or_else(|| Error::contract("hstack of no frames"))?;
        if frames.iter().any(|f| !f.same_size(first)) {
            return Err(Error::contract("hstack frames differ in size"));
        }
        let (w, h) = (first.width, first.height);
        let total = w * frames.len();
        let mut data = vec![0.0; total * h * 3];
        for (k, f) in frames.iter().enumerate() {
            for y in 0..h {
                let dst = (y * total + k * w) * 3;
                data[dst..dst + w * 3].copy_from_slice(&f.data[y * w * 3..(y + 1) * w * 3]);
            }
        }
        Image::new(total, h, data)
    }

    /// Sub-image of width `w` starting at column `x0` (inverse of `hstack`).
    pub fn crop_columns(&self, x0: usize, w: usize) -> Result<Image> {
        if x0 + w > self.width {
            return Err(Error::contract("crop outside image"));
        }
        let mut data = Vec::with_capacity(w * self.height * 3);
        for y in 0..self.height {
            let start = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[start..start + w * 3]);
        }
        Image::new(w, self.height, data)
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, bytes)
        .ok_or_else(|| Error::contract("image buffer size mismatch"))?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
}

/// Loads an 8-bit RGB or grayscale PNG; gray is replicated to three channels.
pub fn load_png(path: &Path) -> Result<Image> {
    let reader = image::ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let decoded = reader
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
    let rgb = decoded.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb
        .into_raw()
        .into_iter()
        .map(|b| b as f64 / 255.0)
        .collect();
    Image::new(w as usize, h as usize, data)
}
