//! Pinhole cameras, depth sampling and alpha compositing.

use hng_tensor::{no_grad, CustomOp, Tensor};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{RadianceField, RadianceSample};
use crate::raster::Image;
use crate::rng::{self, tags, Rng};
use crate::vec3::{self, Vec3};

/// Rays per field batch in [`render_image`]. Fixed so that results do not
/// depend on how chunks are spread over threads.
pub const RAY_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    pub vertical_fov: f64,
    pub near: f64,
    pub far: f64,
}

impl CameraPose {
    /// Camera at `position` looking at the origin with `+z` up.
    pub fn orbit(position: Vec3, vertical_fov: f64, near: f64, far: f64) -> CameraPose {
        CameraPose {
            position,
            look_at: [0.0; 3],
            up: [0.0, 0.0, 1.0],
            vertical_fov,
            near,
            far,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.near < self.far) {
            return Err(Error::Geometry(format!(
                "near {} must be below far {}",
                self.near, self.far
            )));
        }
        if !(self.vertical_fov > 0.0 && self.vertical_fov < std::f64::consts::PI) {
            return Err(Error::Geometry(format!(
                "fov {} outside (0, π)",
                self.vertical_fov
            )));
        }
        self.basis().map(|_| ())
    }

    /// Orthonormal `(forward, right, up)` camera frame.
    pub fn basis(&self) -> Result<(Vec3, Vec3, Vec3)> {
        let view = vec3::sub(self.look_at, self.position);
        let (vn, un) = (vec3::norm(view), vec3::norm(self.up));
        if vn == 0.0 || un == 0.0 {
            return Err(Error::Geometry("zero-length view or up vector".into()));
        }
        let forward = vec3::scale(view, 1.0 / vn);
        let side = vec3::cross(forward, self.up);
        if vec3::norm(side) < 1e-9 * un {
            return Err(Error::Geometry(
                "up vector is parallel to the view direction".into(),
            ));
        }
        let right = vec3::normalize(side);
        let up = vec3::cross(right, forward);
        Ok((forward, right, up))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub near: f64,
    pub far: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        vec3::add(self.origin, vec3::scale(self.direction, t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    Stratified,
    Midpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    pub samples_per_ray: usize,
    pub background: [f64; 3],
    pub sampling_mode: SamplingMode,
    pub rng_seed: u64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            width: 32,
            height: 32,
            samples_per_ray: 32,
            background: [1.0; 3],
            sampling_mode: SamplingMode::Stratified,
            rng_seed: 0,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |key: &str, msg: &str| Error::Config {
            key: format!("render.{key}"),
            msg: msg.into(),
        };
        if self.width < 1 {
            return Err(err("width", "must be >= 1"));
        }
        if self.height < 1 {
            return Err(err("height", "must be >= 1"));
        }
        if self.samples_per_ray < 2 {
            return Err(err("samples_per_ray", "must be >= 2"));
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(err("background", "channels must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// One ray per pixel through its center, rows top to bottom.
pub fn make_camera_rays(pose: &CameraPose, width: usize, height: usize) -> Result<Vec<Ray>> {
    pose.validate()?;
    let (forward, right, up) = pose.basis()?;
    let half = (pose.vertical_fov / 2.0).tan();
    let aspect = width as f64 / height as f64;
    let mut rays = Vec::with_capacity(width * height);
    for j in 0..height {
        let y = (1.0 - 2.0 * (j as f64 + 0.5) / height as f64) * half;
        for i in 0..width {
            let x = (2.0 * (i as f64 + 0.5) / width as f64 - 1.0) * half * aspect;
            let d = vec3::add(
                forward,
                vec3::add(vec3::scale(right, x), vec3::scale(up, y)),
            );
            rays.push(Ray {
                origin: pose.position,
                direction: vec3::normalize(d),
                near: pose.near,
                far: pose.far,
            });
        }
    }
    Ok(rays)
}

/// `n` increasing depths, one inside each equal bin of `[near, far]`.
pub fn sample_depths(ray: &Ray, n: usize, mode: SamplingMode, rng: &mut Rng) -> Vec<f64> {
    let bin = (ray.far - ray.near) / n as f64;
    (0..n)
        .map(|i| {
            let u = match mode {
                SamplingMode::Midpoint => 0.5,
                SamplingMode::Stratified => rng.random::<f64>(),
            };
            ray.near + (i as f64 + u) * bin
        })
        .collect()
}

fn check_depths(depths: &[f64], far: f64) -> Result<()> {
    if depths.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::contract("depths must be strictly increasing"));
    }
    if depths.last().is_some_and(|&t| !(t <= far)) {
        return Err(Error::contract("last depth lies beyond far"));
    }
    Ok(())
}

fn deltas(depths: &[f64], far: f64) -> Vec<f64> {
    let n = depths.len();
    (0..n)
        .map(|i| {
            if i + 1 < n {
                depths[i + 1] - depths[i]
            } else {
                far - depths[i]
            }
        })
        .collect()
}

/// Per-sample weights `T_i·α_i` and the residual transmittance `T_{N+1}`.
pub fn composite_weights(density: &[f64], depths: &[f64], far: f64) -> Result<(Vec<f64>, f64)> {
    check_depths(depths, far)?;
    let mut transmittance = 1.0;
    let weights = density
        .iter()
        .zip(deltas(depths, far))
        .map(|(&s, d)| {
            let tau = s * d;
            let w = transmittance * -(-tau).exp_m1();
            transmittance *= (-tau).exp();
            w
        })
        .collect();
    Ok((weights, transmittance))
}

/// Color of one ray from its samples.
pub fn composite(
    samples: &[RadianceSample],
    depths: &[f64],
    far: f64,
    background: [f64; 3],
) -> Result<[f64; 3]> {
    if samples.len() != depths.len() {
        return Err(Error::contract("sample and depth counts differ"));
    }
    let density: Vec<f64> = samples.iter().map(|s| s.density).collect();
    let (weights, residual) = composite_weights(&density, depths, far)?;
    let mut c = vec3::scale(background, residual);
    for (w, s) in weights.iter().zip(samples) {
        c = vec3::add(c, vec3::scale(s.color, *w));
    }
    Ok(c)
}

/// Batched compositing of `rays` rays with `n` samples each.
struct CompositeOp {
    n: usize,
    deltas: Vec<f64>,
    background: [f64; 3],
}

impl CompositeOp {
    // weights and per-sample transmittance after the sample, for one ray
    fn ray_terms(&self, sigma: &[f64], deltas: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut t = 1.0;
        let mut weights = Vec::with_capacity(self.n);
        let mut after = Vec::with_capacity(self.n);
        for (&s, &d) in sigma.iter().zip(deltas) {
            let tau = s * d;
            weights.push(t * -(-tau).exp_m1());
            t *= (-tau).exp();
            after.push(t);
        }
        (weights, after)
    }

    fn forward(&self, sigma: &[f64], color: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = Vec::with_capacity(sigma.len() / n * 3);
        for (r, s) in sigma.chunks_exact(n).enumerate() {
            let (w, after) = self.ray_terms(s, &self.deltas[r * n..(r + 1) * n]);
            let residual = after[n - 1];
            for ch in 0..3 {
                let mut acc = residual * self.background[ch];
                for k in 0..n {
                    acc += w[k] * color[(r * n + k) * 3 + ch];
                }
                out.push(acc);
            }
        }
        out
    }
}

impl CustomOp for CompositeOp {
    fn name(&self) -> &'static str {
        "composite"
    }

    fn backward(
        &self,
        parents: &[Tensor],
        output: &[f64],
        grad_out: &[f64],
    ) -> Vec<Option<Vec<f64>>> {
        let n = self.n;
        let sigma = parents[0].data();
        let color = parents[1].data();
        let mut g_sigma = vec![0.0; sigma.len()];
        let mut g_color = vec![0.0; color.len()];
        for (r, s) in sigma.chunks_exact(n).enumerate() {
            let dl = &self.deltas[r * n..(r + 1) * n];
            let (w, after) = self.ray_terms(s, dl);
            let g = &grad_out[r * 3..r * 3 + 3];
            let total = &output[r * 3..r * 3 + 3];
            let mut prefix = [0.0; 3];
            for k in 0..n {
                let c = &color[(r * n + k) * 3..(r * n + k) * 3 + 3];
                let mut d_tau = 0.0;
                for ch in 0..3 {
                    prefix[ch] += w[k] * c[ch];
                    // dC/dτ_k = T_{k+1}·c_k − (C − Σ_{i≤k} w_i c_i)
                    d_tau += g[ch] * (after[k] * c[ch] - (total[ch] - prefix[ch]));
                    g_color[(r * n + k) * 3 + ch] = g[ch] * w[k];
                }
                g_sigma[r * n + k] = d_tau * dl[k];
            }
        }
        let keep = |p: &Tensor, g: Vec<f64>| p.requires_grad().then_some(g);
        vec![keep(&parents[0], g_sigma), keep(&parents[1], g_color)]
    }
}

/// Differentiable compositing. `density` is `[R·n]`, `color` `[R·n×3]`,
/// `depths` holds `R·n` values and `far` one per ray. Returns `[R×3]`.
pub fn composite_batch(
    density: &Tensor,
    color: &Tensor,
    depths: &[f64],
    far: &[f64],
    n: usize,
    background: [f64; 3],
) -> Result<Tensor> {
    let rays = far.len();
    if density.shape() != [rays * n] || color.shape() != [rays * n, 3] || depths.len() != rays * n {
        return Err(Error::contract(format!(
            "composite_batch: {rays} rays × {n} samples vs density {:?}, color {:?}, {} depths",
            density.shape(),
            color.shape(),
            depths.len()
        )));
    }
    let mut all_deltas = Vec::with_capacity(rays * n);
    for (d, &f) in depths.chunks_exact(n).zip(far) {
        check_depths(d, f)?;
        all_deltas.extend(deltas(d, f));
    }
    let op = CompositeOp {
        n,
        deltas: all_deltas,
        background,
    };
    let data = op.forward(&density.data(), &color.data());
    Ok(Tensor::custom(
        &[rays, 3],
        data,
        vec![density.clone(), color.clone()],
        op,
    )?)
}

/// Depths for one pixel, drawn from that pixel's own RNG stream.
fn pixel_depths(ray: &Ray, pixel: usize, cfg: &RenderConfig) -> Vec<f64> {
    let mut r = rng::stream(cfg.rng_seed, tags::PIXEL, pixel as u64);
    sample_depths(ray, cfg.samples_per_ray, cfg.sampling_mode, &mut r)
}

/// Renders `rays`, whose first pixel has row-major index `first_pixel`.
fn render_rays(
    field: &dyn RadianceField,
    rays: &[Ray],
    first_pixel: usize,
    cfg: &RenderConfig,
) -> Result<Tensor> {
    let n = cfg.samples_per_ray;
    let mut points = Vec::with_capacity(rays.len() * n * 3);
    let mut depths = Vec::with_capacity(rays.len() * n);
    for (i, ray) in rays.iter().enumerate() {
        let ts = pixel_depths(ray, first_pixel + i, cfg);
        for &t in &ts {
            points.extend_from_slice(&ray.at(t));
        }
        depths.extend(ts);
    }
    let points = Tensor::new(&[rays.len() * n, 3], points)?;
    let out = field.eval(&points)?;
    let far: Vec<f64> = rays.iter().map(|r| r.far).collect();
    composite_batch(&out.density, &out.color, &depths, &far, n, cfg.background)
}

/// Differentiable `[H×W×3]` render; all pixels go through one field batch.
pub fn render_tensor(
    field: &dyn RadianceField,
    pose: &CameraPose,
    cfg: &RenderConfig,
) -> Result<Tensor> {
    cfg.validate()?;
    let rays = make_camera_rays(pose, cfg.width, cfg.height)?;
    Ok(render_rays(field, &rays, 0, cfg)?.reshape(&[cfg.height, cfg.width, 3])?)
}

/// Non-differentiable render, chunked over the current rayon pool.
pub fn render_image(
    field: &dyn RadianceField,
    pose: &CameraPose,
    cfg: &RenderConfig,
) -> Result<Image> {
    cfg.validate()?;
    let rays = make_camera_rays(pose, cfg.width, cfg.height)?;
    let chunks: Vec<Vec<f64>> = rays
        .par_chunks(RAY_CHUNK)
        .enumerate()
        .map(|(c, chunk)| no_grad(|| Ok(render_rays(field, chunk, c * RAY_CHUNK, cfg)?.to_vec())))
        .collect::<Result<_>>()?;
    Image::new(cfg.width, cfg.height, chunks.concat())
}
