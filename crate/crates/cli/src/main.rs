use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use hng_core::bench::{available_cores, bench_render};
use hng_core::checkpoint;
use hng_core::config::{parse_config, DataSource, RunConfig};
use hng_core::data::{self, make_dataset, Dataset, MANIFEST_NAME};
use hng_core::field::analytic::{Profile, Sphere};
use hng_core::field::RadianceField;
use hng_core::generator::{interpolate_latents, sample_latent, LatentCode};
use hng_core::mesh::{density_grid, marching_cubes, write_obj};
use hng_core::metrics::{image_stats, kid_poly, MetricReport};
use hng_core::raster::{save_png, Image};
use hng_core::render::{CameraPose, RenderConfig};
use hng_core::rng::{self, tags};
use hng_core::trainer::{self, generate_samples, LoopOptions, TrainState};

#[derive(Parser)]
#[command(
    name = "hng",
    version,
    about = "Train, render and evaluate hypernetwork-generated radiance fields"
)]
struct Cli {
    /// Worker threads for rendering and data generation.
    #[arg(long, global = true, env = "HNG_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the GAN, writing checkpoints and a metrics log to --out.
    Train(TrainArgs),
    /// Render random samples, or one latent along the pose sweep.
    Render(RenderArgs),
    /// Render the straight latent path between two seeds as a PNG strip.
    Interpolate(InterpolateArgs),
    /// Extract an OBJ mesh from a generated field's density.
    Mesh(MeshArgs),
    /// Write a procedural dataset and its manifest.
    GenData(GenDataArgs),
    /// Compare checkpoint samples with a dataset.
    Eval(EvalArgs),
    /// Measure renderer throughput with one and many workers.
    Bench(BenchArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Resume from this checkpoint; its embedded config is used.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides train.rng_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides train.total_steps.
    #[arg(long)]
    steps: Option<u64>,
    /// Use this dataset (directory or manifest) instead of the config's.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Stop at this step without changing the schedule; resume later.
    #[arg(long)]
    stop_at: Option<u64>,
}

#[derive(Args)]
struct View {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Square output size; defaults to the training render size.
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    view: View,
    #[arg(long)]
    out: PathBuf,
    /// Latent seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Render this many random samples instead of a pose sweep.
    #[arg(long)]
    samples: Option<usize>,
    /// Only the first N poses of the sweep.
    #[arg(long)]
    frames: Option<usize>,
}

#[derive(Args)]
struct InterpolateArgs {
    #[command(flatten)]
    view: View,
    /// Output PNG strip.
    #[arg(long)]
    out: PathBuf,
    /// Latent seed of the first frame.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Latent seed of the last frame.
    #[arg(long, default_value_t = 1)]
    to_seed: u64,
    #[arg(long, default_value_t = 9)]
    steps: usize,
}

#[derive(Args)]
struct MeshArgs {
    #[arg(long, required_unless_present = "sphere")]
    checkpoint: Option<PathBuf>,
    /// Mesh an analytic sphere of this radius instead of a checkpoint.
    #[arg(long, conflicts_with = "checkpoint")]
    sphere: Option<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output OBJ file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides data.n.
    #[arg(long)]
    n: Option<usize>,
    /// Overrides data.seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory or manifest; defaults to the checkpoint's data config.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Sample seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Overrides metrics.eval_samples.
    #[arg(long)]
    n: Option<usize>,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Bench a trained field; otherwise a freshly initialized one.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    Ok(match path {
        Some(p) => parse_config(p)?,
        None => RunConfig::default(),
    })
}

fn latent(seed: u64, z_dim: usize) -> LatentCode {
    sample_latent(z_dim, &mut rng::stream(seed, tags::LATENT, 0))
}

fn procedural(cfg: &RunConfig) -> Result<Dataset> {
    let d = &cfg.data;
    Ok(make_dataset(
        d.n,
        &cfg.scene_template(),
        &cfg.poses,
        &d.randomize,
        cfg.render.width,
        d.seed,
    )?)
}

fn open_dataset(path: &Path, cfg: &RunConfig) -> Result<Dataset> {
    let has_manifest = path.is_file() || path.join(MANIFEST_NAME).exists();
    Ok(if has_manifest {
        data::load_dataset(path)?
    } else {
        data::load_png_dir(path, cfg.render.background)?
    })
}

fn config_dataset(cfg: &RunConfig) -> Result<Dataset> {
    match cfg.data.source {
        DataSource::Procedural => procedural(cfg),
        DataSource::PngDir => open_dataset(cfg.data.path.as_deref().expect("validated"), cfg),
    }
}

fn view_config(cfg: &RunConfig, size: Option<usize>) -> RenderConfig {
    let s = size.unwrap_or(cfg.render.width);
    RenderConfig {
        width: s,
        height: s,
        ..cfg.render.clone()
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn train(a: TrainArgs) -> Result<()> {
    let (state, mut cfg) = match &a.checkpoint {
        Some(p) => checkpoint::load(p)?,
        None => {
            let cfg = load_config(a.config.as_deref())?;
            (TrainState::init(&cfg)?, cfg)
        }
    };
    if let Some(s) = a.steps {
        cfg.train.total_steps = s;
    }
    if let Some(s) = a.seed {
        cfg.train.rng_seed = s;
    }
    cfg.validate()?;
    let state = if a.checkpoint.is_none() && a.seed.is_some() {
        TrainState::init(&cfg)?
    } else {
        state
    };
    let ds = match &a.dataset {
        Some(p) => open_dataset(p, &cfg)?,
        None => config_dataset(&cfg)?,
    };
    let opts = LoopOptions {
        out_dir: Some(a.out.clone()),
        stop_at: a.stop_at,
    };
    let final_state = trainer::train_loop(state, &cfg, &ds, &opts, &mut |r| {
        eprintln!(
            "step {:>7}  loss_d {:.5}  loss_g {:.5}",
            r.step, r.loss_d, r.loss_g
        );
    })?;
    println!(
        "trained to step {} ({})",
        final_state.step,
        a.out.join(trainer::CHECKPOINT_NAME).display()
    );
    Ok(())
}

fn render(a: RenderArgs) -> Result<()> {
    let (state, cfg) = checkpoint::load(&a.view.checkpoint)?;
    let rcfg = view_config(&cfg, a.view.size);
    create_dir(&a.out)?;
    if let Some(n) = a.samples {
        let view_cfg = RunConfig {
            render: rcfg,
            ..cfg.clone()
        };
        for (i, img) in generate_samples(&state, &view_cfg, n, a.seed)?
            .iter()
            .enumerate()
        {
            save_png(img, &a.out.join(format!("sample_{i:04}.png")))?;
        }
        println!("wrote {n} samples to {}", a.out.display());
        return Ok(());
    }
    let z = latent(a.seed, cfg.generator.z_dim);
    let mut poses = cfg.poses.axis_sweep();
    poses.truncate(a.frames.unwrap_or(poses.len()));
    for (i, pose) in poses.iter().enumerate() {
        let img = state.render(&z, pose, &cfg.field, &rcfg)?;
        save_png(&img, &a.out.join(format!("frame_{i:03}.png")))?;
    }
    println!("wrote {} frames to {}", poses.len(), a.out.display());
    Ok(())
}

fn interpolate(a: InterpolateArgs) -> Result<()> {
    let (state, cfg) = checkpoint::load(&a.view.checkpoint)?;
    let rcfg = view_config(&cfg, a.view.size);
    let z_dim = cfg.generator.z_dim;
    let path = interpolate_latents(&latent(a.seed, z_dim), &latent(a.to_seed, z_dim), a.steps)?;
    // the first pose of the render sweep, so endpoints match `render`
    let pose: CameraPose = cfg.poses.axis_sweep()[0];
    let frames: Vec<Image> = path
        .iter()
        .map(|z| state.render(z, &pose, &cfg.field, &rcfg))
        .collect::<hng_core::Result<_>>()?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save_png(&Image::hstack(&frames)?, &a.out)?;
    println!("wrote {}-frame strip to {}", frames.len(), a.out.display());
    Ok(())
}

fn mesh(a: MeshArgs) -> Result<()> {
    let mut settings = load_config(a.config.as_deref())?.mesh;
    let sphere;
    let trained;
    let field: &dyn RadianceField = match (&a.checkpoint, a.sphere) {
        (_, Some(radius)) => {
            sphere = Sphere {
                center: [0.0; 3],
                radius,
                color: [1.0; 3],
                profile: Profile::Exponential {
                    level: settings.threshold,
                    width: 0.1,
                },
            };
            &sphere
        }
        (Some(p), None) => {
            let (state, cfg) = checkpoint::load(p)?;
            settings = cfg.mesh.clone();
            trained = state.field_for(&latent(a.seed, cfg.generator.z_dim), &cfg.field)?;
            &trained
        }
        (None, None) => bail!("mesh needs --checkpoint or --sphere"),
    };
    let g = a.resolution.unwrap_or(settings.resolution);
    let tau = a.threshold.unwrap_or(settings.threshold);
    let m = marching_cubes(&density_grid(field, g)?, tau);
    write_obj(&m, &a.out)?;
    println!(
        "wrote {} vertices, {} triangles to {}",
        m.vertices.len(),
        m.triangles.len(),
        a.out.display()
    );
    Ok(())
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(n) = a.n {
        cfg.data.n = n;
    }
    if let Some(s) = a.seed {
        cfg.data.seed = s;
    }
    cfg.validate()?;
    let ds = procedural(&cfg)?;
    let manifest = data::write_dataset(&ds, Some(&cfg.poses), &a.out)?;
    println!("wrote {} images and {}", ds.len(), manifest.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let (state, cfg) = checkpoint::load(&a.checkpoint)?;
    let ds = match &a.dataset {
        Some(p) => open_dataset(p, &cfg)?,
        None => config_dataset(&cfg)?,
    };
    let real = ds.images();
    let eval_cfg = RunConfig {
        render: view_config(&cfg, Some(ds.size)),
        ..cfg.clone()
    };
    let n = a.n.unwrap_or(cfg.metrics.eval_samples);
    let fake = generate_samples(&state, &eval_cfg, n, a.seed)?;
    let down = cfg.metrics.kid_downsample.min(ds.size);
    let kid = kid_poly(&real, &fake, down)?;
    let report = serde_json::json!({
        "kid": MetricReport::kid(kid, real.len(), fake.len(), down),
        "real_stats": image_stats(&real)?,
        "fake_stats": image_stats(&fake)?,
        "seed": a.seed,
        "step": state.step,
    });
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(out) = &a.out {
        fs::write(out, &text).with_context(|| format!("writing {}", out.display()))?;
    }
    println!("{text}");
    Ok(())
}

fn bench(a: BenchArgs, workers: Option<usize>) -> Result<()> {
    let (state, cfg) = match &a.checkpoint {
        Some(p) => checkpoint::load(p)?,
        None => {
            let cfg = load_config(a.config.as_deref())?;
            (TrainState::init(&cfg)?, cfg)
        }
    };
    let field = state.field_for(&latent(a.seed, cfg.generator.z_dim), &cfg.field)?;
    let rcfg = view_config(&cfg, Some(a.size));
    let most = workers.unwrap_or_else(available_cores).max(1);
    let counts: Vec<usize> = if most == 1 { vec![1] } else { vec![1, most] };
    let (report, _) = bench_render(
        &field,
        &cfg.poses.pose_at(0.0, 0.0),
        &rcfg,
        &counts,
        a.repeats,
    )?;
    let text = serde_json::to_string_pretty(&serde_json::json!({
        "report": report,
        "speedup": report.speedup(),
    }))?;
    if let Some(out) = &a.out {
        fs::write(out, &text).with_context(|| format!("writing {}", out.display()))?;
    }
    println!("{text}");
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if n == 0 {
            bail!("--workers must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker pool")?;
    }
    match cli.command {
        Command::Train(a) => train(a),
        Command::Render(a) => render(a),
        Command::Interpolate(a) => interpolate(a),
        Command::Mesh(a) => mesh(a),
        Command::GenData(a) => gen_data(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a, cli.workers),
    }
}
