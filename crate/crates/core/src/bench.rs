//! Renderer throughput at several worker counts.

use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::RadianceField;
use crate::raster::Image;
use crate::render::{render_image, CameraPose, RenderConfig};

#[derive(Debug, Clone, Serialize)]
pub struct BenchRun {
    pub workers: usize,
    pub seconds: f64,
    pub ray_samples_per_second: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub width: usize,
    pub height: usize,
    pub samples_per_ray: usize,
    pub available_cores: usize,
    pub runs: Vec<BenchRun>,
    /// All worker counts produced bit-identical pixels.
    pub identical: bool,
}

impl BenchReport {
    /// Throughput of the largest worker count over the single-worker one.
    pub fn speedup(&self) -> Option<f64> {
        let one = self.runs.iter().find(|r| r.workers == 1)?;
        let most = self.runs.iter().max_by_key(|r| r.workers)?;
        Some(most.ray_samples_per_second / one.ray_samples_per_second)
    }
}

pub fn available_cores() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

/// Renders one image `repeats` times per worker count on a dedicated pool;
/// the best time counts.
pub fn bench_render(
    field: &dyn RadianceField,
    pose: &CameraPose,
    cfg: &RenderConfig,
    worker_counts: &[usize],
    repeats: usize,
) -> Result<(BenchReport, Image)> {
    if worker_counts.is_empty() || worker_counts.contains(&0) || repeats == 0 {
        return Err(Error::contract(
            "bench needs positive worker counts and repeats",
        ));
    }
    let samples = (cfg.width * cfg.height * cfg.samples_per_ray) as f64;
    let mut runs = Vec::new();
    let mut reference: Option<Image> = None;
    let mut identical = true;
    for &workers in worker_counts {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::contract(format!("thread pool: {e}")))?;
        let mut best = f64::INFINITY;
        for _ in 0..repeats {
            let start = Instant::now();
            let img = pool.install(|| render_image(field, pose, cfg))?;
            best = best.min(start.elapsed().as_secs_f64());
            match &reference {
                None => reference = Some(img),
                Some(r) => {
                    identical &= r
                        .data
                        .iter()
                        .zip(&img.data)
                        .all(|(a, b)| a.to_bits() == b.to_bits());
                }
            }
        }
        runs.push(BenchRun {
            workers,
            seconds: best,
            ray_samples_per_second: samples / best,
        });
    }
    let report = BenchReport {
        width: cfg.width,
        height: cfg.height,
        samples_per_ray: cfg.samples_per_ray,
        available_cores: available_cores(),
        runs,
        identical,
    };
    Ok((report, reference.expect("at least one run")))
}
