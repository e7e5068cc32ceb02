//! PSNR, pixel moments and a polynomial-kernel MMD between image sets.

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::raster::Image;

/// `10·log10(1/mse)`; identical images give `+∞`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_size(b) {
        return Err(hng_tensor::TensorError::ShapeMismatch {
            op: "psnr",
            lhs: vec![a.height, a.width, 3],
            rhs: vec![b.height, b.width, 3],
        }
        .into());
    }
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    })
}

/// Flattened pixels of each image after box downsampling to `size`.
fn features(images: &[Image], size: usize) -> Result<Vec<Vec<f64>>> {
    images
        .iter()
        .map(|img| {
            if img.width != img.height || img.width % size != 0 {
                return Err(Error::contract(format!(
                    "cannot downsample {}×{} image to {size}×{size}",
                    img.width, img.height
                )));
            }
            Ok(img.downsample(img.width / size)?.data)
        })
        .collect()
}

fn poly_kernel(x: &[f64], y: &[f64]) -> f64 {
    let d = x.len() as f64;
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (dot / d + 1.0).powi(3)
}

/// Sum of `k(x_i, y_j)` over all pairs, optionally skipping `i == j`.
fn kernel_sum(xs: &[Vec<f64>], ys: &[Vec<f64>], skip_diagonal: bool) -> f64 {
    let rows: Vec<f64> = xs
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            ys.iter()
                .enumerate()
                .filter(|&(j, _)| !(skip_diagonal && i == j))
                .map(|(_, y)| poly_kernel(x, y))
                .sum()
        })
        .collect();
    rows.iter().sum()
}

/// Unbiased MMD² with kernel `(x·y/d + 1)³` on downsampled pixels.
pub fn kid_poly(real: &[Image], fake: &[Image], downsample_to: usize) -> Result<f64> {
    if real.len() < 2 || fake.len() < 2 {
        return Err(Error::contract(format!(
            "kid needs at least 2 images per set, got {} and {}",
            real.len(),
            fake.len()
        )));
    }
    if downsample_to == 0 {
        return Err(Error::contract("downsample size must be positive"));
    }
    let (x, y) = (
        features(real, downsample_to)?,
        features(fake, downsample_to)?,
    );
    let (m, n) = (x.len() as f64, y.len() as f64);
    let kxx = kernel_sum(&x, &x, true) / (m * (m - 1.0));
    let kyy = kernel_sum(&y, &y, true) / (n * (n - 1.0));
    let kxy = kernel_sum(&x, &y, false) / (m * n);
    Ok(kxx + kyy - 2.0 * kxy)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageStats {
    pub mean: [f64; 3],
    pub variance: [f64; 3],
    pub pixels: usize,
}

/// Per-channel mean and population variance over every pixel of the set.
pub fn image_stats(images: &[Image]) -> Result<ImageStats> {
    if images.is_empty() {
        return Err(Error::contract("image_stats of an empty set"));
    }
    let pixels: usize = images.iter().map(|i| i.width * i.height).sum();
    let mut mean = [0.0; 3];
    for img in images {
        for p in img.data.chunks_exact(3) {
            for c in 0..3 {
                mean[c] += p[c];
            }
        }
    }
    mean.iter_mut().for_each(|m| *m /= pixels as f64);
    let mut variance = [0.0; 3];
    for img in images {
        for p in img.data.chunks_exact(3) {
            for c in 0..3 {
                variance[c] += (p[c] - mean[c]).powi(2);
            }
        }
    }
    variance.iter_mut().for_each(|v| *v /= pixels as f64);
    Ok(ImageStats {
        mean,
        variance,
        pixels,
    })
}

fn finite_or_inf<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else if *v < 0.0 {
        s.serialize_str("-inf")
    } else {
        s.serialize_str("nan")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub name: String,
    #[serde(serialize_with = "finite_or_inf")]
    pub value: f64,
    pub n_real: usize,
    pub n_fake: usize,
    pub config: serde_json::Value,
}

impl MetricReport {
    pub fn kid(value: f64, n_real: usize, n_fake: usize, downsample_to: usize) -> MetricReport {
        MetricReport {
            name: "kid_poly".into(),
            value,
            n_real,
            n_fake,
            config: serde_json::json!({
                "kernel": "polynomial (x·y/d + 1)^3 on raw pixels",
                "downsample_to": downsample_to,
                "estimator": "unbiased MMD^2",
                "comparable_to_inception_kid": false,
            }),
        }
    }

    pub fn psnr(value: f64) -> MetricReport {
        MetricReport {
            name: "psnr".into(),
            value,
            n_real: 1,
            n_fake: 1,
            config: serde_json::json!({"peak": 1.0, "unit": "dB"}),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}
