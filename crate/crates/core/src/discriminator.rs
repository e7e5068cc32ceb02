//! Convolutional critic producing one realness logit per image.

use hng_tensor::Tensor;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    pub image_size: usize,
    /// Output channels of each stride-2 3×3 conv.
    pub channels: Vec<usize>,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            image_size: 16,
            channels: vec![16, 32, 64],
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |key: &str, msg: String| Error::Config {
            key: format!("discriminator.{key}"),
            msg,
        };
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(err(
                "channels",
                "needs at least one positive channel count".into(),
            ));
        }
        if self.final_size() < 2 || self.image_size % (1 << self.channels.len()) != 0 {
            return Err(err(
                "image_size",
                format!(
                    "{} must be a multiple of {} leaving a final map of at least 2×2",
                    self.image_size,
                    1 << self.channels.len()
                ),
            ));
        }
        Ok(())
    }

    fn final_size(&self) -> usize {
        self.image_size >> self.channels.len()
    }
}

#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub kernel: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct DiscriminatorParams {
    pub convs: Vec<ConvLayer>,
    pub out_weight: Tensor,
    pub out_bias: Tensor,
    pub image_size: usize,
}

fn uniform(shape: &[usize], bound: f64, rng: &mut Rng) -> Result<Tensor> {
    let n = shape.iter().product();
    Ok(Tensor::param(
        shape,
        (0..n).map(|_| rng.random_range(-bound..bound)).collect(),
    )?)
}

impl DiscriminatorParams {
    pub fn init(cfg: &DiscriminatorConfig, rng: &mut Rng) -> Result<DiscriminatorParams> {
        cfg.validate()?;
        let gain = (2.0 / (1.0 + hng_tensor::LEAKY_SLOPE.powi(2))).sqrt();
        let mut convs = Vec::new();
        let mut c_in = 3;
        for &c_out in &cfg.channels {
            let fan_in = (c_in * 9) as f64;
            convs.push(ConvLayer {
                kernel: uniform(&[c_out, c_in, 3, 3], gain * (3.0 / fan_in).sqrt(), rng)?,
                bias: Tensor::param(&[c_out], vec![0.0; c_out])?,
            });
            c_in = c_out;
        }
        let features = c_in * cfg.final_size() * cfg.final_size();
        Ok(DiscriminatorParams {
            convs,
            out_weight: uniform(&[1, features], (3.0 / features as f64).sqrt(), rng)?,
            out_bias: Tensor::param(&[1], vec![0.0])?,
            image_size: cfg.image_size,
        })
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("discriminator.conv.{i}.kernel"), c.kernel.clone()));
            out.push((format!("discriminator.conv.{i}.bias"), c.bias.clone()));
        }
        out.push(("discriminator.out.weight".into(), self.out_weight.clone()));
        out.push(("discriminator.out.bias".into(), self.out_bias.clone()));
        out
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }
}

/// Raw logits `[B]` for images `[B×3×S×S]` with values in `[0,1]`.
pub fn discriminate(images: &Tensor, d: &DiscriminatorParams) -> Result<Tensor> {
    let s = d.image_size;
    let b = match images.shape() {
        &[b, 3, h, w] if h == s && w == s => b,
        other => {
            return Err(hng_tensor::TensorError::Shape {
                op: "discriminate",
                msg: format!("expected B×3×{s}×{s} images, got {other:?}"),
            }
            .into())
        }
    };
    let mut h = images.clone();
    for c in &d.convs {
        h = h.conv2d(&c.kernel, Some(&c.bias), 2, 1)?.leaky_relu();
    }
    let flat = h.reshape(&[b, h.numel() / b])?;
    let logits = flat
        .matmul(&d.out_weight.transpose()?)?
        .add_row(&d.out_bias)?;
    Ok(logits.reshape(&[b])?)
}

/// Stacks `[S×S×3]` images into the `[B×3×S×S]` layout the critic expects.
pub fn to_nchw(images: &[Tensor]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::contract("empty image batch"))?;
    let (h, w) = match first.shape() {
        &[h, w, 3] => (h, w),
        other => {
            return Err(Error::contract(format!(
                "expected H×W×3 images, got {other:?}"
            )))
        }
    };
    let parts: Vec<Tensor> = images
        .iter()
        .map(|t| t.reshape(&[1, h, w, 3]))
        .collect::<std::result::Result<_, _>>()?;
    Ok(Tensor::concat(&parts, 0)?.permute(&[0, 3, 1, 2])?)
}
