//! Hypernetwork: Gaussian noise to per-layer modulation factors.

use hng_tensor::Tensor;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FieldConfig, Modulation, ModulationSet};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub z_dim: usize,
    pub trunk_layers: usize,
    pub trunk_width: usize,
    /// Head weights are drawn with scale `head_init_scale / √k`.
    pub head_init_scale: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            z_dim: 64,
            trunk_layers: 3,
            trunk_width: 256,
            head_init_scale: 0.05,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |key: &str, msg: &str| Error::Config {
            key: format!("generator.{key}"),
            msg: msg.into(),
        };
        if self.z_dim < 1 {
            return Err(err("z_dim", "must be >= 1"));
        }
        if self.trunk_layers < 1 {
            return Err(err("trunk_layers", "must be >= 1"));
        }
        if self.trunk_width < 1 {
            return Err(err("trunk_width", "must be >= 1"));
        }
        if !(self.head_init_scale > 0.0 && self.head_init_scale.is_finite()) {
            return Err(err("head_init_scale", "must be a positive number"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode(pub Vec<f64>);

impl LatentCode {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[1, self.0.len()], self.0.clone()).expect("latent is non-empty")
    }
}

pub fn sample_latent(z_dim: usize, rng: &mut Rng) -> LatentCode {
    LatentCode((0..z_dim).map(|_| rng.sample(StandardNormal)).collect())
}

/// `z_t = (1−t)·z0 + t·z1` for `t = i/(steps−1)`; endpoints are copied.
pub fn interpolate_latents(
    z0: &LatentCode,
    z1: &LatentCode,
    steps: usize,
) -> Result<Vec<LatentCode>> {
    if steps < 2 {
        return Err(Error::contract(format!(
            "interpolation needs >= 2 steps, got {steps}"
        )));
    }
    if z0.dim() != z1.dim() {
        return Err(Error::contract("latent dimensions differ"));
    }
    Ok((0..steps)
        .map(|i| match i {
            0 => z0.clone(),
            i if i == steps - 1 => z1.clone(),
            _ => {
                let t = i as f64 / (steps - 1) as f64;
                LatentCode(
                    z0.0.iter()
                        .zip(&z1.0)
                        .map(|(a, b)| (1.0 - t) * a + t * b)
                        .collect(),
                )
            }
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    fn uniform(
        n_out: usize,
        n_in: usize,
        bound: f64,
        bias: Vec<f64>,
        rng: &mut Rng,
    ) -> Result<Linear> {
        let w = (0..n_out * n_in)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Ok(Linear {
            weight: Tensor::param(&[n_out, n_in], w)?,
            bias: Tensor::param(&[n_out], bias)?,
        })
    }

    /// `[B×n_in]` to `[B×n_out]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.transpose()?)?.add_row(&self.bias)?)
    }
}

#[derive(Debug, Clone)]
pub struct Head {
    pub a: Linear,
    pub b: Linear,
}

#[derive(Debug, Clone)]
pub struct GeneratorParams {
    pub trunk: Vec<Linear>,
    pub heads: Vec<Head>,
    pub z_dim: usize,
}

impl GeneratorParams {
    /// Head biases start at the identity modulation (`A·B` all ones), so the
    /// initial field is the shared one plus a small per-object perturbation.
    pub fn init(
        gcfg: &GeneratorConfig,
        fcfg: &FieldConfig,
        rng: &mut Rng,
    ) -> Result<GeneratorParams> {
        gcfg.validate()?;
        fcfg.validate()?;
        let mut trunk = Vec::with_capacity(gcfg.trunk_layers);
        let mut n_in = gcfg.z_dim;
        for _ in 0..gcfg.trunk_layers {
            let bound = (6.0 / n_in as f64).sqrt();
            trunk.push(Linear::uniform(
                gcfg.trunk_width,
                n_in,
                bound,
                vec![0.0; gcfg.trunk_width],
                rng,
            )?);
            n_in = gcfg.trunk_width;
        }
        let k = fcfg.fmm_rank;
        // uniform bound √3·s gives standard deviation s per unit of input
        let bound = 3f64.sqrt() * gcfg.head_init_scale / (k as f64).sqrt() / (n_in as f64).sqrt();
        let heads = fcfg
            .layer_shapes()
            .into_iter()
            .map(|(rows, cols)| {
                let mut a_bias = vec![0.0; rows * k];
                (0..rows).for_each(|i| a_bias[i * k] = 1.0);
                let mut b_bias = vec![0.0; k * cols];
                b_bias[..cols].iter_mut().for_each(|v| *v = 1.0);
                Ok(Head {
                    a: Linear::uniform(rows * k, n_in, bound, a_bias, rng)?,
                    b: Linear::uniform(k * cols, n_in, bound, b_bias, rng)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(GeneratorParams {
            trunk,
            heads,
            z_dim: gcfg.z_dim,
        })
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.trunk.iter().enumerate() {
            out.push((format!("generator.trunk.{i}.weight"), l.weight.clone()));
            out.push((format!("generator.trunk.{i}.bias"), l.bias.clone()));
        }
        for (i, h) in self.heads.iter().enumerate() {
            for (part, l) in [("a", &h.a), ("b", &h.b)] {
                out.push((
                    format!("generator.head.{i}.{part}.weight"),
                    l.weight.clone(),
                ));
                out.push((format!("generator.head.{i}.{part}.bias"), l.bias.clone()));
            }
        }
        out
    }

    fn trunk_features(&self, z: &LatentCode) -> Result<Tensor> {
        let mut h = z.to_tensor();
        for l in &self.trunk {
            h = l.forward(&h)?.leaky_relu();
        }
        Ok(h)
    }
}

/// Trunk features, then one pair of linear heads per field layer.
pub fn generate_modulations(
    z: &LatentCode,
    g: &GeneratorParams,
    cfg: &FieldConfig,
) -> Result<ModulationSet> {
    if z.dim() != g.z_dim {
        return Err(Error::contract(format!(
            "latent has {} entries, generator expects {}",
            z.dim(),
            g.z_dim
        )));
    }
    let shapes = cfg.layer_shapes();
    if shapes.len() != g.heads.len() {
        return Err(Error::contract(format!(
            "generator has {} heads, field config needs {}",
            g.heads.len(),
            shapes.len()
        )));
    }
    let k = cfg.fmm_rank;
    let h = g.trunk_features(z)?;
    let layers = g
        .heads
        .iter()
        .zip(shapes)
        .map(|(head, (rows, cols))| {
            if head.a.bias.numel() != rows * k || head.b.bias.numel() != k * cols {
                return Err(Error::contract(format!(
                    "head sizes {}/{} do not match layer {rows}×{cols} at rank {k}",
                    head.a.bias.numel(),
                    head.b.bias.numel()
                )));
            }
            Ok(Modulation {
                a: head.a.forward(&h)?.reshape(&[rows, k])?,
                b: head.b.forward(&h)?.reshape(&[k, cols])?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ModulationSet { layers })
}
