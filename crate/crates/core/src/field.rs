//! The simplified radiance field: position in, color and density out.
//!
//! Every layer is a factorized multiplicative modulation (FMM) layer
//! `y = (W ⊙ (A·B))·x + b`. `W` and `b` are shared across all generated
//! objects; `A` (`n_out×k`) and `B` (`k×n_in`) come from the generator.
//! There is no viewing-direction input.

use std::f64::consts::PI;

use hng_tensor::{CustomOp, Tensor};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityActivation {
    Softplus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorActivation {
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub pe_frequencies: usize,
    pub include_raw_input: bool,
    pub fmm_rank: usize,
    pub density_activation: DensityActivation,
    pub color_activation: ColorActivation,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            hidden_layers: 4,
            hidden_width: 128,
            pe_frequencies: 6,
            include_raw_input: true,
            fmm_rank: 10,
            density_activation: DensityActivation::Softplus,
            color_activation: ColorActivation::Sigmoid,
        }
    }
}

fn config_err(key: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        key: format!("field.{key}"),
        msg: msg.into(),
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers < 1 {
            return Err(config_err("hidden_layers", "must be >= 1"));
        }
        if self.hidden_width < 8 {
            return Err(config_err("hidden_width", "must be >= 8"));
        }
        if self.fmm_rank < 1 {
            return Err(config_err("fmm_rank", "must be >= 1"));
        }
        if !self.include_raw_input && self.pe_frequencies == 0 {
            return Err(config_err(
                "pe_frequencies",
                "must be >= 1 when include_raw_input is false",
            ));
        }
        if self.pe_frequencies > 20 {
            return Err(config_err("pe_frequencies", "must be <= 20"));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        let raw = if self.include_raw_input { 3 } else { 0 };
        raw + 6 * self.pe_frequencies
    }

    /// `(n_out, n_in)` of every FMM layer: hidden layers, then the density
    /// head (width 1), then the color head (width 3).
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let w = self.hidden_width;
        let mut shapes = vec![(w, self.input_width())];
        shapes.extend(std::iter::repeat_n((w, w), self.hidden_layers - 1));
        shapes.push((1, w));
        shapes.push((3, w));
        shapes
    }
}

/// Shared weights of one FMM layer.
#[derive(Debug, Clone)]
pub struct FmmWeights {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct FieldParams {
    pub layers: Vec<FmmWeights>,
}

impl FieldParams {
    /// He-uniform hidden weights, zero biases.
    pub fn init(cfg: &FieldConfig, rng: &mut Rng) -> Result<FieldParams> {
        cfg.validate()?;
        let shapes = cfg.layer_shapes();
        let heads_start = shapes.len() - 2;
        let layers = shapes
            .iter()
            .enumerate()
            .map(|(i, &(n_out, n_in))| {
                // heads use a smaller Xavier-style bound
                let bound = if i < heads_start {
                    (6.0 / n_in as f64).sqrt()
                } else {
                    (6.0 / (n_in + n_out) as f64).sqrt()
                };
                let w = (0..n_out * n_in)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                Ok(FmmWeights {
                    weight: Tensor::param(&[n_out, n_in], w)?,
                    bias: Tensor::param(&[n_out], vec![0.0; n_out])?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(FieldParams { layers })
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.clone(), l.bias.clone()])
            .collect()
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("field.{i}.weight"), l.weight.clone()),
                    (format!("field.{i}.bias"), l.bias.clone()),
                ]
            })
            .collect()
    }
}

/// Per-object modulation factors of one layer.
#[derive(Debug, Clone)]
pub struct Modulation {
    pub a: Tensor,
    pub b: Tensor,
}

#[derive(Debug, Clone)]
pub struct ModulationSet {
    pub layers: Vec<Modulation>,
}

impl ModulationSet {
    /// `A·B` = all ones in every layer, which turns each FMM layer into a
    /// plain linear layer.
    pub fn identity(cfg: &FieldConfig) -> ModulationSet {
        Self::from_fn(cfg, |n_out, n_in, k| {
            let mut a = vec![0.0; n_out * k];
            let mut b = vec![0.0; k * n_in];
            (0..n_out).for_each(|i| a[i * k] = 1.0);
            b[..n_in].iter_mut().for_each(|v| *v = 1.0);
            (a, b)
        })
    }

    pub fn zeros(cfg: &FieldConfig) -> ModulationSet {
        Self::from_fn(cfg, |n_out, n_in, k| {
            (vec![0.0; n_out * k], vec![0.0; k * n_in])
        })
    }

    fn from_fn(
        cfg: &FieldConfig,
        mut f: impl FnMut(usize, usize, usize) -> (Vec<f64>, Vec<f64>),
    ) -> ModulationSet {
        let k = cfg.fmm_rank;
        let layers = cfg
            .layer_shapes()
            .into_iter()
            .map(|(n_out, n_in)| {
                let (a, b) = f(n_out, n_in, k);
                Modulation {
                    a: Tensor::new(&[n_out, k], a).expect("shape matches"),
                    b: Tensor::new(&[k, n_in], b).expect("shape matches"),
                }
            })
            .collect();
        ModulationSet { layers }
    }

    fn check(&self, cfg: &FieldConfig) -> Result<()> {
        let shapes = cfg.layer_shapes();
        if self.layers.len() != shapes.len() {
            return Err(Error::contract(format!(
                "modulation set has {} layers, field config needs {}",
                self.layers.len(),
                shapes.len()
            )));
        }
        for (i, (m, &(n_out, n_in))) in self.layers.iter().zip(&shapes).enumerate() {
            let k = cfg.fmm_rank;
            if m.a.shape() != [n_out, k] || m.b.shape() != [k, n_in] {
                return Err(Error::contract(format!(
                    "layer {i}: modulation shapes {:?}, {:?} do not match {n_out}×{k}, {k}×{n_in}",
                    m.a.shape(),
                    m.b.shape()
                )));
            }
        }
        Ok(())
    }
}

/// `W ⊙ (A·B)`.
pub fn modulated_weight(weight: &Tensor, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let ab = a.matmul(b)?;
    Ok(weight.mul(&ab)?)
}

/// One FMM layer on a single input vector `[n_in]` or a batch `[P×n_in]`.
pub fn fmm_apply(
    x: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    a: &Tensor,
    b: &Tensor,
) -> Result<Tensor> {
    let single = x.rank() == 1;
    let batch = if single {
        x.reshape(&[1, x.numel()])?
    } else {
        x.clone()
    };
    let w = modulated_weight(weight, a, b)?;
    let y = batch.matmul(&w.transpose()?)?.add_row(bias)?;
    if single {
        Ok(y.reshape(&[bias.numel()])?)
    } else {
        Ok(y)
    }
}

/// `[x?] ++ [sin(2^j·π·x_i) for i, cos(2^j·π·x_i) for i] for j in 0..L`.
pub fn positional_encode(x: [f64; 3], frequencies: usize, include_raw: bool) -> Vec<f64> {
    let mut out = Vec::with_capacity(3 + 6 * frequencies);
    if include_raw {
        out.extend_from_slice(&x);
    }
    for j in 0..frequencies {
        let f = (1u64 << j) as f64 * PI;
        out.extend(x.iter().map(|v| (f * v).sin()));
        out.extend(x.iter().map(|v| (f * v).cos()));
    }
    out
}

struct EncodeOp {
    frequencies: usize,
    include_raw: bool,
}

impl CustomOp for EncodeOp {
    fn name(&self) -> &'static str {
        "positional_encode"
    }

    fn backward(
        &self,
        parents: &[Tensor],
        output: &[f64],
        grad_out: &[f64],
    ) -> Vec<Option<Vec<f64>>> {
        let points = &parents[0];
        if !points.requires_grad() {
            return vec![None];
        }
        let width = output.len() / (points.numel() / 3);
        let raw = if self.include_raw { 3 } else { 0 };
        let mut grad = vec![0.0; points.numel()];
        for ((g, out), gx) in grad_out
            .chunks_exact(width)
            .zip(output.chunks_exact(width))
            .zip(grad.chunks_exact_mut(3))
        {
            gx[..raw].copy_from_slice(&g[..raw]);
            for j in 0..self.frequencies {
                let f = (1u64 << j) as f64 * PI;
                let base = raw + 6 * j;
                for i in 0..3 {
                    // d sin = f·cos, d cos = −f·sin; reuse the stored outputs
                    let (s, c) = (out[base + i], out[base + 3 + i]);
                    gx[i] += f * (g[base + i] * c - g[base + 3 + i] * s);
                }
            }
        }
        vec![Some(grad)]
    }
}

/// Positional encoding of `[P×3]` points, differentiable wrt the points.
pub fn encode_points(points: &Tensor, frequencies: usize, include_raw: bool) -> Result<Tensor> {
    if points.rank() != 2 || points.shape()[1] != 3 {
        return Err(Error::contract(format!(
            "points must be P×3, got {:?}",
            points.shape()
        )));
    }
    let p = points.shape()[0];
    let data: Vec<f64> = points
        .data()
        .chunks_exact(3)
        .flat_map(|x| positional_encode([x[0], x[1], x[2]], frequencies, include_raw))
        .collect();
    let width = data.len() / p;
    Ok(Tensor::custom(
        &[p, width],
        data,
        vec![points.clone()],
        EncodeOp {
            frequencies,
            include_raw,
        },
    )?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadianceSample {
    pub color: [f64; 3],
    pub density: f64,
}

/// Batched field output: `density` is `[P]`, `color` is `[P×3]`.
#[derive(Debug, Clone)]
pub struct FieldOutput {
    pub density: Tensor,
    pub color: Tensor,
}

impl FieldOutput {
    pub fn samples(&self) -> Vec<RadianceSample> {
        let d = self.density.data();
        let c = self.color.data();
        d.iter()
            .zip(c.chunks_exact(3))
            .map(|(&density, c)| RadianceSample {
                color: [c[0], c[1], c[2]],
                density,
            })
            .collect()
    }
}

/// Anything that maps `[P×3]` positions to densities and colors.
pub trait RadianceField: Sync {
    fn eval(&self, points: &Tensor) -> Result<FieldOutput>;
}

/// The generated field: shared params with one object's modulations applied.
/// Effective weights are formed once at construction.
pub struct ModulatedField {
    cfg: FieldConfig,
    // transposed W ⊙ (A·B), ready for `points · Wᵀ`
    weights_t: Vec<Tensor>,
    biases: Vec<Tensor>,
}

impl ModulatedField {
    pub fn new(
        params: &FieldParams,
        mods: &ModulationSet,
        cfg: &FieldConfig,
    ) -> Result<ModulatedField> {
        mods.check(cfg)?;
        if params.layers.len() != mods.layers.len() {
            return Err(Error::contract(format!(
                "field has {} layers, modulation set {}",
                params.layers.len(),
                mods.layers.len()
            )));
        }
        let weights_t = params
            .layers
            .iter()
            .zip(&mods.layers)
            .map(|(p, m)| Ok(modulated_weight(&p.weight, &m.a, &m.b)?.transpose()?))
            .collect::<Result<_>>()?;
        Ok(ModulatedField {
            cfg: cfg.clone(),
            weights_t,
            biases: params.layers.iter().map(|l| l.bias.clone()).collect(),
        })
    }
}

impl RadianceField for ModulatedField {
    fn eval(&self, points: &Tensor) -> Result<FieldOutput> {
        let p = points.shape().first().copied().unwrap_or(0);
        let mut h = encode_points(points, self.cfg.pe_frequencies, self.cfg.include_raw_input)?;
        let hidden = self.cfg.hidden_layers;
        for (w, b) in self.weights_t[..hidden].iter().zip(&self.biases) {
            h = h.matmul(w)?.add_row(b)?.relu();
        }
        let density = h
            .matmul(&self.weights_t[hidden])?
            .add_row(&self.biases[hidden])?
            .softplus()?
            .reshape(&[p])?;
        let color = h
            .matmul(&self.weights_t[hidden + 1])?
            .add_row(&self.biases[hidden + 1])?
            .sigmoid();
        Ok(FieldOutput { density, color })
    }
}

/// Evaluates the generated field at a batch of `[P×3]` points.
pub fn field_eval(
    points: &Tensor,
    params: &FieldParams,
    mods: &ModulationSet,
    cfg: &FieldConfig,
) -> Result<FieldOutput> {
    ModulatedField::new(params, mods, cfg)?.eval(points)
}

/// Closed-form fields used as rendering and meshing oracles.
pub mod analytic {
    use super::*;

    /// How density falls off across the sphere surface.
    #[derive(Debug, Clone, Copy, PartialEq)]
    pub enum Profile {
        /// `inside` within the radius, zero outside.
        Step { inside: f64 },
        /// `level·exp((R − r)/width)`: crosses `level` exactly at the radius.
        Exponential { level: f64, width: f64 },
    }

    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct Sphere {
        pub center: [f64; 3],
        pub radius: f64,
        pub color: [f64; 3],
        pub profile: Profile,
    }

    impl Sphere {
        pub fn opaque(radius: f64, color: [f64; 3]) -> Sphere {
            Sphere {
                center: [0.0; 3],
                radius,
                color,
                profile: Profile::Step { inside: 1e6 },
            }
        }

        pub fn density_at(&self, x: [f64; 3]) -> f64 {
            let d = [
                x[0] - self.center[0],
                x[1] - self.center[1],
                x[2] - self.center[2],
            ];
            let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            match self.profile {
                Profile::Step { inside } => {
                    if r < self.radius {
                        inside
                    } else {
                        0.0
                    }
                }
                Profile::Exponential { level, width } => level * ((self.radius - r) / width).exp(),
            }
        }
    }

    impl RadianceField for Sphere {
        fn eval(&self, points: &Tensor) -> Result<FieldOutput> {
            let data = points.data();
            let density: Vec<f64> = data
                .chunks_exact(3)
                .map(|x| self.density_at([x[0], x[1], x[2]]))
                .collect();
            let n = density.len();
            let color = self.color.repeat(n);
            Ok(FieldOutput {
                density: Tensor::new(&[n], density)?,
                color: Tensor::new(&[n, 3], color)?,
            })
        }
    }

    /// Same density and color everywhere.
    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct Homogeneous {
        pub density: f64,
        pub color: [f64; 3],
    }

    impl RadianceField for Homogeneous {
        fn eval(&self, points: &Tensor) -> Result<FieldOutput> {
            let n = points.shape()[0];
            Ok(FieldOutput {
                density: Tensor::full(&[n], self.density),
                color: Tensor::new(&[n, 3], self.color.repeat(n))?,
            })
        }
    }
}
