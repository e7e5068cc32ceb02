//! End-to-end acceptance checks, one status line per criterion.
//!
//! `cargo test --release -p hng-core --test acceptance -- 3 8` runs a subset.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write as _;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use hng_core::bench::{available_cores, bench_render};
use hng_core::checkpoint;
use hng_core::config::RunConfig;
use hng_core::data::{make_dataset, oracle_render, sample_pose, SceneSpec};
use hng_core::discriminator::DiscriminatorConfig;
use hng_core::field::analytic::{Homogeneous, Sphere};
use hng_core::field::{fmm_apply, FieldConfig, FieldParams, ModulatedField};
use hng_core::generator::{
    generate_modulations, interpolate_latents, sample_latent, GeneratorConfig,
};
use hng_core::mesh::{density_grid, marching_cubes, write_obj};
use hng_core::metrics::{image_stats, kid_poly, psnr};
use hng_core::raster::Image;
use hng_core::render::{
    composite_batch, composite_weights, render_image, render_tensor, CameraPose, RenderConfig,
    SamplingMode,
};
use hng_core::rng::{self, tags};
use hng_core::trainer::{
    generate_samples, reconstruction_step, train_loop, LoopOptions, TrainState, CHECKPOINT_NAME,
};
use hng_tensor::{finite_diff_check, Tensor, Unary};
use rand::Rng as _;

enum Status {
    Pass,
    Fail,
    /// Could not be assessed on this machine; never counted as a pass.
    Unverified,
}

struct Outcome {
    status: Status,
    detail: String,
}

fn pass(detail: String) -> Outcome {
    Outcome {
        status: Status::Pass,
        detail,
    }
}

fn check(ok: bool, detail: String) -> Outcome {
    let status = if ok { Status::Pass } else { Status::Fail };
    Outcome { status, detail }
}

// Collects sub-results so one line can report all of them.
#[derive(Default)]
struct Checks {
    failed: Vec<String>,
    notes: Vec<String>,
}

impl Checks {
    fn expect(&mut self, ok: bool, what: impl Into<String>) {
        let what = what.into();
        if !ok {
            self.failed.push(what.clone());
        }
        self.notes.push(what);
    }

    fn outcome(self) -> Outcome {
        if self.failed.is_empty() {
            pass(self.notes.join("; "))
        } else {
            check(false, format!("failed: {}", self.failed.join("; ")))
        }
    }
}

fn random(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
    let mut r = rng::stream(seed, 0, 0);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

fn project(t: &Tensor, seed: u64) -> hng_tensor::Result<Tensor> {
    t.mul(&random(t.shape(), seed, -1.0, 1.0))?.sum(None)
}

fn fd(f: impl Fn(&Tensor) -> hng_tensor::Result<Tensor>, x: &Tensor, h: f64) -> f64 {
    finite_diff_check(f, x, h).unwrap()
}

fn gradient_suite() -> Outcome {
    let started = Instant::now();
    let h = 1e-4;
    let mut op: Vec<(&str, f64)> = Vec::new();
    let (a, b) = (random(&[3, 4], 1, -2.0, 2.0), random(&[4, 2], 2, -2.0, 2.0));
    op.push(("matmul·a", fd(|x| project(&x.matmul(&b)?, 3), &a, h)));
    op.push(("matmul·b", fd(|x| project(&a.matmul(x)?, 3), &b, h)));
    op.push(("transpose", fd(|x| project(&x.transpose()?, 4), &a, h)));
    let c = random(&[3, 4], 5, -2.0, 2.0);
    op.push(("add", fd(|x| project(&x.add(&c)?, 6), &a, h)));
    op.push(("sub", fd(|x| project(&c.sub(x)?, 6), &a, h)));
    op.push(("mul", fd(|x| project(&x.mul(&c)?, 6), &a, h)));
    let row = random(&[4], 7, -2.0, 2.0);
    op.push(("add_row", fd(|x| project(&a.add_row(x)?, 8), &row, h)));
    op.push(("scale", fd(|x| project(&x.scale(-1.7), 9), &a, h)));
    op.push(("add_scalar", fd(|x| project(&x.add_scalar(0.3), 9), &a, h)));
    let u = random(&[5, 3], 10, -2.0, 2.0);
    for f in [
        Unary::Relu,
        Unary::LeakyRelu,
        Unary::Sigmoid,
        Unary::Softplus,
        Unary::Exp,
        Unary::Sin,
        Unary::Cos,
        Unary::Neg,
    ] {
        op.push((
            Box::leak(format!("{f:?}").into_boxed_str()),
            fd(|x| project(&x.map(f)?, 11), &u, h),
        ));
    }
    let pos = random(&[5, 3], 12, 0.5, 2.0);
    op.push(("Log", fd(|x| project(&x.map(Unary::Log)?, 11), &pos, h)));
    let t3 = random(&[2, 3, 4], 13, -2.0, 2.0);
    op.push(("sum", fd(|x| x.sum(None), &t3, h)));
    op.push((
        "mean",
        fd(|x| x.mean(None)?.scale(5.0).map(Unary::Sin), &t3, h),
    ));
    for axis in 0..3 {
        op.push((
            "sum(axis)",
            fd(|x| project(&x.sum(Some(axis))?, 14), &t3, h),
        ));
        op.push((
            "mean(axis)",
            fd(|x| project(&x.mean(Some(axis))?, 14), &t3, h),
        ));
    }
    op.push(("reshape", fd(|x| project(&x.reshape(&[6, 4])?, 15), &t3, h)));
    op.push((
        "permute",
        fd(|x| project(&x.permute(&[2, 0, 1])?, 16), &t3, h),
    ));
    let other = random(&[2, 1, 4], 17, -2.0, 2.0);
    op.push((
        "concat",
        fd(
            |x| {
                project(
                    &Tensor::concat(&[other.clone(), x.clone(), x.clone()], 1)?,
                    18,
                )
            },
            &t3,
            h,
        ),
    ));
    let img = random(&[2, 3, 8, 8], 19, -1.0, 1.0);
    let k = random(&[4, 3, 3, 3], 20, -1.0, 1.0);
    let kb = random(&[4], 21, -1.0, 1.0);
    op.push((
        "conv2d·x",
        fd(|x| project(&x.conv2d(&k, Some(&kb), 2, 1)?, 22), &img, h),
    ));
    op.push((
        "conv2d·k",
        fd(|x| project(&img.conv2d(x, Some(&kb), 2, 1)?, 22), &k, h),
    ));
    op.push((
        "conv2d·b",
        fd(|x| project(&img.conv2d(&k, Some(x), 2, 1)?, 22), &kb, h),
    ));
    op.push(("im2col", fd(|x| project(&x.im2col(3, 1, 1)?, 23), &img, h)));

    // compositing custom op
    let (rays, n) = (3, 6);
    let mut r = rng::stream(24, 0, 0);
    let mut depths = Vec::new();
    for _ in 0..rays {
        let mut t: Vec<f64> = (0..n).map(|_| r.random_range(0.5..2.5)).collect();
        t.sort_by(f64::total_cmp);
        depths.extend(t);
    }
    let far = vec![3.0; rays];
    let sigma = random(&[rays * n], 25, 0.0, 2.0);
    let color = random(&[rays * n, 3], 26, 0.0, 1.0);
    let bg = [0.3, 0.6, 0.9];
    op.push((
        "composite·σ",
        fd(
            |s| {
                project(
                    &composite_batch(s, &color, &depths, &far, n, bg).unwrap(),
                    27,
                )
            },
            &sigma,
            1e-5,
        ),
    ));
    op.push((
        "composite·c",
        fd(
            |c| {
                project(
                    &composite_batch(&sigma, c, &depths, &far, n, bg).unwrap(),
                    27,
                )
            },
            &color,
            1e-5,
        ),
    ));

    // end to end: 4×4 render, N = 8, two hidden layers of width 8
    let fc = FieldConfig {
        hidden_layers: 2,
        hidden_width: 8,
        pe_frequencies: 2,
        fmm_rank: 2,
        ..FieldConfig::default()
    };
    let gc = GeneratorConfig {
        z_dim: 4,
        trunk_layers: 1,
        trunk_width: 8,
        head_init_scale: 0.5,
    };
    let params = FieldParams::init(&fc, &mut rng::stream(30, 0, 0)).unwrap();
    let gen =
        hng_core::generator::GeneratorParams::init(&gc, &fc, &mut rng::stream(31, 0, 0)).unwrap();
    let z = sample_latent(4, &mut rng::stream(32, 0, 0));
    let rc = RenderConfig {
        width: 4,
        height: 4,
        samples_per_ray: 8,
        background: [1.0; 3],
        sampling_mode: SamplingMode::Stratified,
        rng_seed: 33,
    };
    let pose = CameraPose::orbit([1.2, -2.0, 1.0], PI / 3.0, 0.8, 4.2);
    let target = random(&[4, 4, 3], 34, 0.0, 1.0);
    let mse =
        |p: &FieldParams, g: &hng_core::generator::GeneratorParams| -> hng_tensor::Result<Tensor> {
            let mods = generate_modulations(&z, g, &fc).unwrap();
            let field = ModulatedField::new(p, &mods, &fc).unwrap();
            let d = render_tensor(&field, &pose, &rc).unwrap().sub(&target)?;
            d.mul(&d)?.mean(None)
        };
    // (name, relative error, largest analytic gradient)
    let mut e2e: Vec<(String, f64, f64)> = Vec::new();
    let mut probe =
        |name: String, f: &dyn Fn(&Tensor) -> hng_tensor::Result<Tensor>, x: &Tensor| {
            let leaf = Tensor::param(x.shape(), x.to_vec()).unwrap();
            f(&leaf).unwrap().backward().unwrap();
            let scale = leaf
                .grad()
                .unwrap()
                .iter()
                .fold(0.0f64, |m, g| m.max(g.abs()));
            e2e.push((name, fd(f, x, 1e-5), scale));
        };
    for layer in 0..params.layers.len() {
        let f = |x: &Tensor| {
            let mut p = params.clone();
            p.layers[layer].weight = x.clone();
            mse(&p, &gen)
        };
        probe(format!("W{layer}"), &f, &params.layers[layer].weight);
    }
    let f = |x: &Tensor| {
        let mut g = gen.clone();
        g.trunk[0].weight = x.clone();
        mse(&params, &g)
    };
    probe("trunk".into(), &f, &gen.trunk[0].weight);

    let elapsed = started.elapsed().as_secs_f64();
    let worst_op = op
        .iter()
        .cloned()
        .fold(("", 0.0), |m, x| if x.1 > m.1 { x } else { m });
    let worst_e2e = e2e.iter().map(|x| x.1).fold(0.0, f64::max);
    let weakest = e2e.iter().map(|x| x.2).fold(f64::INFINITY, f64::min);
    let mut c = Checks::default();
    c.expect(
        worst_op.1 < 1e-5,
        format!(
            "{} ops, worst {} {:.1e} < 1e-5",
            op.len(),
            worst_op.0,
            worst_op.1
        ),
    );
    c.expect(
        worst_e2e < 1e-4 && weakest > 1e-6,
        format!(
            "end-to-end worst {worst_e2e:.1e} < 1e-4 over {} tensors (smallest max|grad| {weakest:.1e})",
            e2e.len()
        ),
    );
    c.expect(elapsed < 300.0, format!("{elapsed:.1}s < 300s"));
    c.outcome()
}

fn compositing_normalization() -> Outcome {
    let mut r = rng::stream(40, 0, 0);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let n = r.random_range(1..=128);
        let near = r.random_range(0.0..2.0);
        let far = near + r.random_range(0.1..5.0);
        let mut depths: Vec<f64> = (0..n).map(|_| r.random_range(near..far)).collect();
        depths.sort_by(f64::total_cmp);
        // densities over six decades, including exact zeros
        let density: Vec<f64> = (0..n)
            .map(|_| {
                if r.random_bool(0.1) {
                    0.0
                } else {
                    10f64.powf(r.random_range(-3.0..3.0))
                }
            })
            .collect();
        let (w, residual) = composite_weights(&density, &depths, far).unwrap();
        worst = worst.max((w.iter().sum::<f64>() + residual - 1.0).abs());
    }
    check(
        worst < 1e-10,
        format!("max |Σw + T − 1| = {worst:.1e} < 1e-10 over 10⁴ vectors"),
    )
}

fn renderer_oracle() -> Outcome {
    let mut c = Checks::default();
    // s·(t_f − t_n) = 6 keeps the half-bin closure term under 1e-4 at N = 256
    let (s, near, far) = (3.0, 1.0, 3.0);
    let field = Homogeneous {
        density: s,
        color: [1.0, 0.0, 0.0],
    };
    let pose = CameraPose::orbit([0.0, -2.0, 0.0], PI / 3.0, near, far);
    let tr = (-s * (far - near)).exp();
    let exact = [1.0, tr, tr];
    let error = |n: usize| {
        let cfg = RenderConfig {
            width: 3,
            height: 3,
            samples_per_ray: n,
            background: [1.0; 3],
            sampling_mode: SamplingMode::Midpoint,
            rng_seed: 0,
        };
        let img = render_image(&field, &pose, &cfg).unwrap();
        img.data
            .chunks_exact(3)
            .flat_map(|p| (0..3).map(move |k| (p[k] - exact[k]).abs()))
            .fold(0.0, f64::max)
    };
    let e256 = error(256);
    c.expect(
        e256 < 1e-4,
        format!("homogeneous |err| {e256:.1e} < 1e-4 at N=256"),
    );
    let errs: Vec<f64> = [8, 16, 32, 64, 128].iter().map(|&n| error(n)).collect();
    c.expect(
        errs.windows(2).all(|w| w[1] < w[0]),
        format!(
            "decreasing over N=8..128: {}",
            errs.iter()
                .map(|e| format!("{e:.1e}"))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    );

    let red = [1.0, 0.0, 0.0];
    let sphere = Sphere::opaque(0.5, red);
    let scene = SceneSpec::sphere(0.5, red, [1.0; 3]);
    let cfg = RunConfig::default();
    let rc = RenderConfig {
        width: 32,
        height: 32,
        sampling_mode: SamplingMode::Midpoint,
        ..RenderConfig::default()
    };
    let mut worst = 1.0f64;
    for i in 0..8 {
        let pose = sample_pose(&cfg.poses, &mut rng::stream(41, 0, i));
        let img = render_image(&sphere, &pose, &rc).unwrap();
        let truth = oracle_render(&scene, &pose, 32).unwrap();
        let agree = img
            .data
            .chunks_exact(3)
            .zip(truth.data.chunks_exact(3))
            .filter(|(a, b)| (a[1] < 0.5) == (b[1] < 0.5))
            .count();
        worst = worst.min(agree as f64 / 1024.0);
    }
    c.expect(
        worst >= 0.99,
        format!(
            "silhouette agreement ≥ {:.2}% over 8 poses at N={}",
            100.0 * worst,
            rc.samples_per_ray
        ),
    );
    c.outcome()
}

fn fmm_identities() -> Outcome {
    let mut zero_exact = true;
    let mut linear_err = 0.0f64;
    for trial in 0..50u64 {
        let mut r = rng::stream(50, 0, trial);
        let (n_out, n_in, k) = (
            r.random_range(1..12),
            r.random_range(1..12),
            r.random_range(1..5),
        );
        let w = random(&[n_out, n_in], 100 + trial, -2.0, 2.0);
        let b = random(&[n_out], 200 + trial, -2.0, 2.0);
        let x = random(&[7, n_in], 300 + trial, -2.0, 2.0);
        let bm = random(&[k, n_in], 400 + trial, -2.0, 2.0);
        let out = fmm_apply(&x, &w, &b, &Tensor::zeros(&[n_out, k]), &bm)
            .unwrap()
            .to_vec();
        let bias = b.to_vec();
        zero_exact &= out.chunks(n_out).all(|row| row == bias.as_slice());

        let ones = fmm_apply(
            &x,
            &w,
            &b,
            &Tensor::full(&[n_out, 1], 1.0),
            &Tensor::full(&[1, n_in], 1.0),
        )
        .unwrap()
        .to_vec();
        let (wd, xd) = (w.to_vec(), x.to_vec());
        for p in 0..7 {
            for i in 0..n_out {
                let plain: f64 = (0..n_in)
                    .map(|j| wd[i * n_in + j] * xd[p * n_in + j])
                    .sum::<f64>()
                    + bias[i];
                linear_err = linear_err.max((ones[p * n_out + i] - plain).abs());
            }
        }
    }
    let mut c = Checks::default();
    c.expect(
        zero_exact,
        "A = 0 gives the bias bit-exactly (50 random layers)",
    );
    c.expect(
        linear_err < 1e-12,
        format!("rank-1 ones vs plain linear {linear_err:.1e} < 1e-12"),
    );
    c.outcome()
}

fn reconstruction() -> Outcome {
    let mut rc = RunConfig::default();
    rc.field = FieldConfig {
        hidden_layers: 2,
        hidden_width: 32,
        pe_frequencies: 4,
        fmm_rank: 4,
        ..FieldConfig::default()
    };
    rc.generator = GeneratorConfig {
        z_dim: 16,
        trunk_layers: 1,
        trunk_width: 32,
        head_init_scale: 0.05,
    };
    rc.render = RenderConfig {
        width: 32,
        height: 32,
        samples_per_ray: 16,
        ..RenderConfig::default()
    };
    rc.discriminator.image_size = 32;
    rc.validate().unwrap();
    let scene = SceneSpec::sphere(0.5, [0.8, 0.3, 0.2], rc.render.background);
    let views: Vec<(CameraPose, Image)> = (0..21)
        .map(|i| {
            let p = sample_pose(&rc.poses, &mut rng::stream(0, 9, i));
            (p, oracle_render(&scene, &p, 32).unwrap())
        })
        .collect();
    let (train, held_out) = (&views[..20], &views[20]);
    let mut state = TrainState::init(&rc).unwrap();
    let z = sample_latent(rc.generator.z_dim, &mut rng::stream(0, tags::LATENT, 0));
    let started = Instant::now();
    let mut best = f64::NEG_INFINITY;
    let mut reached = None;
    for step in 0..10_000usize {
        // one training view per step, cycling through all twenty
        reconstruction_step(&mut state, &rc, std::slice::from_ref(&train[step % 20]), &z).unwrap();
        if (step + 1) % 250 == 0 {
            let img = state
                .render(&z, &held_out.0, &rc.field, &rc.render)
                .unwrap();
            let p = psnr(&img, &held_out.1).unwrap();
            best = best.max(p);
            if p >= 25.0 {
                reached = Some((step + 1, p));
                break;
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    match reached {
        Some((steps, p)) => check(
            secs <= 1200.0,
            format!(
                "held-out PSNR {p:.1} dB ≥ 25 after {steps} steps (20 views, 32×32), {secs:.0}s"
            ),
        ),
        None => check(
            false,
            format!("best held-out PSNR {best:.1} dB < 25 after 10k steps"),
        ),
    }
}

// Desk-sized model; the 20k steps and 2k images are as specified.
fn gan_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.field = FieldConfig {
        hidden_layers: 2,
        hidden_width: 16,
        pe_frequencies: 3,
        fmm_rank: 4,
        ..FieldConfig::default()
    };
    cfg.generator = GeneratorConfig {
        z_dim: 16,
        trunk_layers: 2,
        trunk_width: 64,
        head_init_scale: 0.05,
    };
    cfg.discriminator = DiscriminatorConfig::default();
    cfg.render.samples_per_ray = 8;
    cfg.validate().unwrap();
    cfg
}

fn gan_smoke() -> Outcome {
    let cfg = gan_config();
    let ds = make_dataset(
        2000,
        &cfg.scene_template(),
        &cfg.poses,
        &cfg.data.randomize,
        16,
        cfg.data.seed,
    )
    .unwrap();
    let started = Instant::now();
    let run = train_loop(
        TrainState::init(&cfg).unwrap(),
        &cfg,
        &ds,
        &LoopOptions::default(),
        &mut |_| {},
    );
    let state = match run {
        Ok(s) => s,
        Err(e) => return check(false, format!("training failed: {e}")),
    };
    let secs = started.elapsed().as_secs_f64();
    let finite = state
        .named_params()
        .iter()
        .all(|(_, t)| t.to_vec().iter().all(|v| v.is_finite()))
        && state
            .history
            .iter()
            .all(|r| r.loss_d.is_finite() && r.loss_g.is_finite());

    let real = ds.images();
    let fake = generate_samples(&state, &cfg, 500, 77).unwrap();
    let mut r = rng::stream(78, 0, 0);
    let noise: Vec<Image> = (0..500)
        .map(|_| {
            Image::new(
                16,
                16,
                (0..16 * 16 * 3).map(|_| r.random::<f64>()).collect(),
            )
            .unwrap()
        })
        .collect();
    let (sr, sf) = (image_stats(&real).unwrap(), image_stats(&fake).unwrap());
    let gap = (0..3)
        .map(|k| (sr.mean[k] - sf.mean[k]).abs())
        .fold(0.0, f64::max);
    let kid_fake = kid_poly(&fake, &real, 16).unwrap();
    let kid_noise = kid_poly(&noise, &real, 16).unwrap();

    let mut c = Checks::default();
    c.expect(
        finite,
        format!("{} steps without NaN/Inf ({secs:.0}s)", state.step),
    );
    c.expect(gap < 0.1, format!("max channel-mean gap {gap:.3} < 0.1"));
    c.expect(
        kid_fake < 0.2 * kid_noise,
        format!(
            "kid {kid_fake:.4} < 0.2 × noise kid {kid_noise:.4} (ratio {:.3})",
            kid_fake / kid_noise
        ),
    );
    c.outcome()
}

fn interpolation() -> Outcome {
    let cfg = gan_config();
    let state = TrainState::init(&cfg).unwrap();
    let z0 = sample_latent(cfg.generator.z_dim, &mut rng::stream(1, tags::LATENT, 0));
    let z1 = sample_latent(cfg.generator.z_dim, &mut rng::stream(2, tags::LATENT, 0));
    let path = interpolate_latents(&z0, &z1, 9).unwrap();
    let pose = cfg.poses.axis_sweep()[0];
    let frames: Vec<Image> = path
        .iter()
        .map(|z| state.render(z, &pose, &cfg.field, &cfg.render).unwrap())
        .collect();
    let bits = |img: &Image| img.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let direct0 = state.render(&z0, &pose, &cfg.field, &cfg.render).unwrap();
    let direct1 = state.render(&z1, &pose, &cfg.field, &cfg.render).unwrap();
    let mut c = Checks::default();
    c.expect(frames.len() == 9, format!("{} frames", frames.len()));
    c.expect(
        frames
            .iter()
            .flat_map(|f| &f.data)
            .all(|v| v.is_finite() && (0.0..=1.0).contains(v)),
        "all pixels finite in [0,1]",
    );
    c.expect(
        bits(&frames[0]) == bits(&direct0) && bits(&frames[8]) == bits(&direct1),
        "endpoints bit-equal to direct renders",
    );
    c.outcome()
}

fn mesh() -> Outcome {
    let g = 64;
    let h = 2.0 / (g - 1) as f64;
    let m = marching_cubes(
        &density_grid(&Sphere::opaque(0.5, [1.0; 3]), g).unwrap(),
        10.0,
    );
    let radii: Vec<f64> = m
        .vertices
        .iter()
        .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
        .collect();
    let worst = radii.iter().map(|r| (r - 0.5).abs()).fold(0.0, f64::max);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sphere.obj");
    write_obj(&m, &path).unwrap();
    let opts = tobj::LoadOptions {
        single_index: true,
        ..Default::default()
    };
    let reparsed = tobj::load_obj(&path, &opts).map(|(models, _)| {
        models.len() == 1
            && models[0].mesh.indices.len() == 3 * m.triangles.len()
            && models[0].mesh.positions.len() == 3 * m.vertices.len()
    });
    let mut c = Checks::default();
    c.expect(
        !m.is_empty() && m.is_closed(),
        format!("closed, {} triangles", m.triangles.len()),
    );
    c.expect(
        m.euler_characteristic() == 2,
        format!("Euler {}", m.euler_characteristic()),
    );
    c.expect(
        worst <= 2.0 * h,
        format!("max |r − 0.5| {worst:.4} ≤ 2h = {:.4}", 2.0 * h),
    );
    c.expect(
        matches!(reparsed, Ok(true)),
        "OBJ reparses with matching counts",
    );
    c.outcome()
}

fn checkpoint_determinism() -> Outcome {
    let mut cfg = gan_config();
    cfg.train.total_steps = 110;
    cfg.train.metrics_every = 1;
    cfg.train.checkpoint_every = 1000;
    let ds = make_dataset(
        64,
        &cfg.scene_template(),
        &cfg.poses,
        &cfg.data.randomize,
        16,
        5,
    )
    .unwrap();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (whole, resumed) = pool.install(|| {
        let whole = train_loop(
            TrainState::init(&cfg).unwrap(),
            &cfg,
            &ds,
            &LoopOptions::default(),
            &mut |_| {},
        )
        .unwrap();
        let opts = LoopOptions {
            out_dir: Some(dir.path().to_path_buf()),
            stop_at: Some(100),
        };
        train_loop(
            TrainState::init(&cfg).unwrap(),
            &cfg,
            &ds,
            &opts,
            &mut |_| {},
        )
        .unwrap();
        let (state, saved_cfg) = checkpoint::load(&dir.path().join(CHECKPOINT_NAME)).unwrap();
        assert_eq!(state.step, 100);
        let resumed =
            train_loop(state, &saved_cfg, &ds, &LoopOptions::default(), &mut |_| {}).unwrap();
        (whole, resumed)
    });
    let losses = |s: &TrainState| {
        s.history
            .iter()
            .map(|r| (r.step, r.loss_d.to_bits(), r.loss_g.to_bits()))
            .collect::<Vec<_>>()
    };
    let params = |s: &TrainState| -> HashMap<String, Vec<u64>> {
        s.named_params()
            .into_iter()
            .map(|(n, t)| (n, t.to_vec().iter().map(|v| v.to_bits()).collect()))
            .collect()
    };

    let path = dir.path().join(CHECKPOINT_NAME);
    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x10;
    std::fs::write(&path, &bytes).unwrap();
    let corrupt = checkpoint::load(&path);

    let mut c = Checks::default();
    c.expect(
        losses(&whole) == losses(&resumed) && whole.history.len() == 110,
        "110 per-step losses bit-equal after resume at 100",
    );
    c.expect(
        params(&whole) == params(&resumed),
        "final parameters bit-equal",
    );
    c.expect(
        matches!(&corrupt, Err(e) if e.to_string().contains("CRC")),
        format!("flipped byte {mid} rejected by CRC"),
    );
    c.outcome()
}

fn throughput() -> Outcome {
    let cfg = RunConfig::default();
    let state = TrainState::init(&cfg).unwrap();
    let z = sample_latent(cfg.generator.z_dim, &mut rng::stream(0, tags::LATENT, 0));
    let field = state.field_for(&z, &cfg.field).unwrap();
    let rc = RenderConfig {
        width: 64,
        height: 64,
        ..RenderConfig::default()
    };
    let (report, _) = bench_render(&field, &cfg.poses.axis_sweep()[0], &rc, &[1, 4], 2).unwrap();
    let speedup = report.speedup().unwrap();
    let cores = available_cores();
    let detail = format!(
        "64×64 N={}: bit-identical across 1 and 4 workers: {}; speedup {speedup:.2}× on {cores} core(s)",
        rc.samples_per_ray, report.identical
    );
    if !report.identical {
        return check(false, detail);
    }
    if cores < 4 {
        return Outcome {
            status: Status::Unverified,
            detail: format!("{detail}; the ≥ 2× speedup needs 4 cores and was not assessed"),
        };
    }
    check(speedup >= 2.0, format!("{detail} (≥ 2× required)"))
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "gradient suite", gradient_suite),
        (2, "compositing normalization", compositing_normalization),
        (3, "renderer oracle", renderer_oracle),
        (4, "FMM identities", fmm_identities),
        (5, "reconstruction", reconstruction),
        (6, "GAN smoke", gan_smoke),
        (7, "latent interpolation", interpolation),
        (8, "mesh extraction", mesh),
        (9, "checkpoint determinism", checkpoint_determinism),
        (10, "throughput", throughput),
    ];
    let wanted: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failures = 0;
    // written straight to stderr so the lines show without --nocapture
    let mut out = std::io::stderr();
    for (id, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let started = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            check(false, format!("panicked: {msg}"))
        });
        let label = match outcome.status {
            Status::Pass => "PASS",
            Status::Fail => {
                failures += 1;
                "FAIL"
            }
            Status::Unverified => "UNVERIFIED",
        };
        writeln!(
            out,
            "{label} [{id}] {name}: {} [{:.1}s]",
            outcome.detail,
            started.elapsed().as_secs_f64()
        )
        .unwrap();
    }
    if failures > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
