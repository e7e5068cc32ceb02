//! Adversarial training, the reconstruction harness and the step loop.

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use hng_tensor::{adam_step, no_grad, AdamState, Tensor};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::data::{sample_pose, Dataset};
use crate::discriminator::{discriminate, to_nchw, DiscriminatorParams};
use crate::error::{Error, Result};
use crate::field::{FieldConfig, FieldParams, ModulatedField};
use crate::generator::{generate_modulations, sample_latent, GeneratorParams, LatentCode};
use crate::raster::Image;
use crate::render::{render_image, render_tensor, CameraPose, RenderConfig};
use crate::rng::{self, tags, Rng};

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub loss_d: f64,
    pub loss_g: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psnr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kid: Option<f64>,
    pub wallclock_s: f64,
    pub workers: usize,
    /// Every reduction runs in a fixed order, so values do not depend on
    /// the worker count.
    pub reduction_order: String,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub step: u64,
    pub field: FieldParams,
    pub generator: GeneratorParams,
    pub discriminator: DiscriminatorParams,
    pub adam_g: AdamState,
    pub adam_d: AdamState,
    /// Exponential moving averages of `(loss_d, loss_g)`.
    pub loss_avg: [f64; 2],
    pub history: Vec<MetricRecord>,
}

const LOSS_EMA: f64 = 0.98;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub loss_d: f64,
    pub loss_g: f64,
}

impl TrainState {
    pub fn init(cfg: &RunConfig) -> Result<TrainState> {
        cfg.validate()?;
        let seed = cfg.train.rng_seed;
        let field = FieldParams::init(&cfg.field, &mut rng::stream(seed, tags::MODEL_INIT, 0))?;
        let generator = GeneratorParams::init(
            &cfg.generator,
            &cfg.field,
            &mut rng::stream(seed, tags::MODEL_INIT, 1),
        )?;
        let discriminator = DiscriminatorParams::init(
            &cfg.discriminator,
            &mut rng::stream(seed, tags::MODEL_INIT, 2),
        )?;
        let t = &cfg.train;
        let mut state = TrainState {
            step: 0,
            field,
            generator,
            discriminator,
            adam_g: AdamState::new(&[], t.lr_g, t.beta1, t.beta2),
            adam_d: AdamState::new(&[], t.lr_d, t.beta1, t.beta2),
            loss_avg: [0.0; 2],
            history: Vec::new(),
        };
        state.adam_g = AdamState::new(&state.generator_side(), t.lr_g, t.beta1, t.beta2);
        state.adam_d = AdamState::new(&state.discriminator_side(), t.lr_d, t.beta1, t.beta2);
        Ok(state)
    }

    /// Shared field weights, then trunk and heads.
    pub fn generator_side(&self) -> Vec<Tensor> {
        let mut p = self.field.tensors();
        p.extend(self.generator.tensors());
        p
    }

    pub fn discriminator_side(&self) -> Vec<Tensor> {
        self.discriminator.tensors()
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut p = self.field.named_tensors();
        p.extend(self.generator.named_tensors());
        p.extend(self.discriminator.named_tensors());
        p
    }

    pub fn field_for(&self, z: &LatentCode, cfg: &FieldConfig) -> Result<ModulatedField> {
        let mods = generate_modulations(z, &self.generator, cfg)?;
        ModulatedField::new(&self.field, &mods, cfg)
    }

    /// Non-differentiable render of latent `z`.
    pub fn render(
        &self,
        z: &LatentCode,
        pose: &CameraPose,
        fcfg: &FieldConfig,
        rcfg: &RenderConfig,
    ) -> Result<Image> {
        let field = no_grad(|| self.field_for(z, fcfg))?;
        render_image(&field, pose, rcfg)
    }
}

/// `mean[softplus(−real)] + mean[softplus(fake)]`.
pub fn d_loss(logit_real: &Tensor, logit_fake: &Tensor) -> Result<Tensor> {
    let real = logit_real.neg().softplus()?.mean(None)?;
    let fake = logit_fake.softplus()?.mean(None)?;
    Ok(real.add(&fake)?)
}

/// `mean[softplus(−fake)]`.
pub fn g_loss(logit_fake: &Tensor) -> Result<Tensor> {
    Ok(logit_fake.neg().softplus()?.mean(None)?)
}

/// Noise level at `step`: linear decay to zero at `total`.
pub fn instance_noise(sigma0: f64, step: u64, total: u64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    sigma0 * (1.0 - step as f64 / total as f64).max(0.0)
}

fn add_noise(img: &Tensor, sigma: f64, seed: u64) -> Result<Tensor> {
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let mut r = rng::stream(seed, 0, 0);
    let noise: Vec<f64> = (0..img.numel())
        .map(|_| sigma * r.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(img.add(&Tensor::new(img.shape(), noise)?)?)
}

struct FakeSpec {
    z: LatentCode,
    pose: CameraPose,
    render_seed: u64,
    noise_seed: u64,
}

fn draw_fakes(cfg: &RunConfig, gen: &GeneratorParams, rng: &mut Rng) -> Vec<FakeSpec> {
    (0..cfg.train.batch_size)
        .map(|_| FakeSpec {
            z: sample_latent(gen.z_dim, rng),
            pose: sample_pose(&cfg.poses, rng),
            render_seed: rng.random(),
            noise_seed: rng.random(),
        })
        .collect()
}

fn render_fake(state: &TrainState, cfg: &RunConfig, spec: &FakeSpec, sigma: f64) -> Result<Tensor> {
    let field = state.field_for(&spec.z, &cfg.field)?;
    let rcfg = RenderConfig {
        rng_seed: spec.render_seed,
        ..cfg.render.clone()
    };
    add_noise(
        &render_tensor(&field, &spec.pose, &rcfg)?,
        sigma,
        spec.noise_seed,
    )
}

// non-finite inputs to an op mean training has diverged
fn diverged(step: u64) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Tensor(hng_tensor::TensorError::Domain { op, msg }) => Error::Training {
            step,
            msg: format!("{op}: {msg}"),
        },
        e => e,
    }
}

fn check_finite(v: f64, step: u64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Training {
            step,
            msg: format!("{what} is {v}"),
        })
    }
}

/// Critic update on fixed `[B×3×S×S]` batches; returns the loss before it.
pub fn d_update(state: &mut TrainState, real_batch: &Tensor, fake_batch: &Tensor) -> Result<f64> {
    let loss = d_loss(
        &discriminate(real_batch, &state.discriminator)?,
        &discriminate(fake_batch, &state.discriminator)?,
    )
    .map_err(diverged(state.step))?;
    let value = check_finite(loss.item()?, state.step, "loss_d")?;
    loss.backward()?;
    adam_step(&state.discriminator_side(), &mut state.adam_d)?;
    Ok(value)
}

/// Generator-side update from fakes rendered with gradients; the critic's
/// gradients from this pass are discarded.
pub fn g_update(state: &mut TrainState, fakes: &[Tensor]) -> Result<f64> {
    let loss = g_loss(&discriminate(&to_nchw(fakes)?, &state.discriminator)?)
        .map_err(diverged(state.step))?;
    let value = check_finite(loss.item()?, state.step, "loss_g")?;
    loss.backward()?;
    adam_step(&state.generator_side(), &mut state.adam_g)?;
    state
        .discriminator_side()
        .iter()
        .for_each(|p| p.zero_grad());
    Ok(value)
}

/// One discriminator phase (repeated `d_steps_per_g_step` times) and one
/// generator phase. Advances `state.step`.
pub fn gan_step(state: &mut TrainState, cfg: &RunConfig, real: &[Image]) -> Result<StepLosses> {
    let t = &cfg.train;
    if real.len() != t.batch_size {
        return Err(Error::contract(format!(
            "real batch has {} images, batch_size is {}",
            real.len(),
            t.batch_size
        )));
    }
    let step = state.step;
    let mut r = rng::stream(t.rng_seed, tags::TRAIN_STEP, step);
    let sigma = instance_noise(t.instance_noise_sigma, step, t.total_steps);
    let real_seeds: Vec<u64> = (0..real.len()).map(|_| r.random()).collect();
    let real_imgs: Vec<Tensor> = real
        .iter()
        .zip(&real_seeds)
        .map(|(img, &s)| add_noise(&img.to_tensor(), sigma, s))
        .collect::<Result<_>>()?;
    let real_batch = to_nchw(&real_imgs)?;

    let mut loss_d = f64::NAN;
    for _ in 0..t.d_steps_per_g_step {
        let specs = draw_fakes(cfg, &state.generator, &mut r);
        // fakes are constants here: the generator is not updated in this phase
        let fakes: Vec<Tensor> = specs
            .par_iter()
            .map(|s| no_grad(|| render_fake(state, cfg, s, sigma)))
            .collect::<Result<_>>()
            .map_err(diverged(step))?;
        loss_d = d_update(state, &real_batch, &to_nchw(&fakes)?)?;
    }

    let specs = draw_fakes(cfg, &state.generator, &mut r);
    let fakes: Vec<Tensor> = specs
        .par_iter()
        .map(|s| render_fake(state, cfg, s, sigma))
        .collect::<Result<_>>()
        .map_err(diverged(step))?;
    let loss_g = g_update(state, &fakes)?;

    state.loss_avg = if step == 0 {
        [loss_d, loss_g]
    } else {
        [
            LOSS_EMA * state.loss_avg[0] + (1.0 - LOSS_EMA) * loss_d,
            LOSS_EMA * state.loss_avg[1] + (1.0 - LOSS_EMA) * loss_g,
        ]
    };
    state.step += 1;
    Ok(StepLosses { loss_d, loss_g })
}

/// Fits the generator side so that `z` renders the target views. Returns
/// the mean squared pixel error before the update. Advances `state.step`.
pub fn reconstruction_step(
    state: &mut TrainState,
    cfg: &RunConfig,
    views: &[(CameraPose, Image)],
    z: &LatentCode,
) -> Result<f64> {
    if views.is_empty() {
        return Err(Error::contract("reconstruction needs at least one view"));
    }
    let step = state.step;
    let mut r = rng::stream(cfg.train.rng_seed, tags::TRAIN_STEP, step);
    let field = state.field_for(z, &cfg.field)?;
    let mut total: Option<Tensor> = None;
    for (pose, target) in views {
        let rcfg = RenderConfig {
            width: target.width,
            height: target.height,
            rng_seed: r.random(),
            ..cfg.render.clone()
        };
        let diff = render_tensor(&field, pose, &rcfg)
            .map_err(diverged(step))?
            .sub(&target.to_tensor())?;
        let mse = diff.mul(&diff)?.mean(None)?;
        total = Some(match total {
            None => mse,
            Some(t) => t.add(&mse)?,
        });
    }
    let loss = total
        .expect("views are non-empty")
        .scale(1.0 / views.len() as f64);
    let mse = check_finite(loss.item()?, step, "reconstruction mse")?;
    loss.backward()?;
    adam_step(&state.generator_side(), &mut state.adam_g)?;
    state.step += 1;
    Ok(mse)
}

/// Dataset indices of the real batch used at `step`: consecutive slices of
/// a fresh permutation per epoch.
pub fn batch_indices(seed: u64, step: u64, batch: usize, n: usize) -> Vec<usize> {
    let mut cached: Option<(u64, Vec<usize>)> = None;
    (0..batch as u64)
        .map(|j| {
            let idx = step * batch as u64 + j;
            let epoch = idx / n as u64;
            if cached.as_ref().map(|c| c.0) != Some(epoch) {
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut rng::stream(seed, tags::EPOCH, epoch));
                cached = Some((epoch, perm));
            }
            cached.as_ref().expect("just set").1[(idx % n as u64) as usize]
        })
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct LoopOptions {
    /// Receives `metrics.jsonl` and `checkpoint.hng`.
    pub out_dir: Option<PathBuf>,
    /// Stop early at this step; schedules still follow `total_steps`.
    pub stop_at: Option<u64>,
}

pub const CHECKPOINT_NAME: &str = "checkpoint.hng";
pub const METRICS_NAME: &str = "metrics.jsonl";

/// Runs `gan_step` from `state.step` up to `cfg.train.total_steps` (or
/// `opts.stop_at`).
pub fn train_loop(
    mut state: TrainState,
    cfg: &RunConfig,
    dataset: &Dataset,
    opts: &LoopOptions,
    on_record: &mut dyn FnMut(&MetricRecord),
) -> Result<TrainState> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::contract("training dataset is empty"));
    }
    if dataset.size != cfg.render.width {
        return Err(Error::contract(format!(
            "dataset images are {0}×{0}, render size is {1}×{1}",
            dataset.size, cfg.render.width
        )));
    }
    let t = &cfg.train;
    let started = Instant::now();
    let mut log = match &opts.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(METRICS_NAME);
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            Some((path, file))
        }
        None => None,
    };
    let save = |state: &TrainState| -> Result<()> {
        match &opts.out_dir {
            Some(dir) => checkpoint::save(state, cfg, &dir.join(CHECKPOINT_NAME)),
            None => Ok(()),
        }
    };

    let end = opts.stop_at.map_or(t.total_steps, |s| s.min(t.total_steps));
    while state.step < end {
        let idx = batch_indices(t.rng_seed, state.step, t.batch_size, dataset.len());
        let real: Vec<Image> = idx
            .iter()
            .map(|&i| dataset.items[i].image.clone())
            .collect();
        let losses = gan_step(&mut state, cfg, &real)?;
        if state.step % t.metrics_every == 0 || state.step == end {
            let rec = MetricRecord {
                step: state.step,
                loss_d: losses.loss_d,
                loss_g: losses.loss_g,
                psnr: None,
                kid: None,
                wallclock_s: started.elapsed().as_secs_f64(),
                workers: rayon::current_num_threads(),
                reduction_order: "fixed".into(),
            };
            if let Some((path, file)) = &mut log {
                let line = serde_json::to_string(&rec).expect("record serializes");
                writeln!(file, "{line}").map_err(|e| Error::io(path.as_path(), e))?;
            }
            on_record(&rec);
            state.history.push(rec);
        }
        if state.step % t.checkpoint_every == 0 && state.step < end {
            save(&state)?;
        }
    }
    save(&state)?;
    Ok(state)
}

/// Deterministic samples: latent and pose `i` come from `(seed, i)`.
pub fn generate_samples(
    state: &TrainState,
    cfg: &RunConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<Image>> {
    (0..n)
        .map(|i| {
            let z = sample_latent(
                state.generator.z_dim,
                &mut rng::stream(seed, tags::LATENT, i as u64),
            );
            let pose = sample_pose(&cfg.poses, &mut rng::stream(seed, tags::EVAL, i as u64));
            let rcfg = RenderConfig {
                rng_seed: seed.wrapping_add(i as u64),
                ..cfg.render.clone()
            };
            state.render(&z, &pose, &cfg.field, &rcfg)
        })
        .collect()
}
