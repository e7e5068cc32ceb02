//! Procedural scenes with an exact ray tracer, camera pose distributions and
//! on-disk datasets.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{self, Image};
use crate::render::{make_camera_rays, CameraPose, Ray};
use crate::rng::{self, tags, Rng};
use crate::vec3::{self, Vec3};

/// Half-diagonal of the `[−1,1]³` scene bound.
pub const SCENE_RADIUS: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Primitive {
    Sphere,
    /// Cube with half-extent `size`.
    Box,
    /// Two spheres of radius `size/2` at `center ± axis·size/2`.
    TwoSphere,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub primitive: Primitive,
    pub center: Vec3,
    pub size: f64,
    pub albedo: [f64; 3],
    pub background: [f64; 3],
    /// Offset direction of the two-sphere composite.
    #[serde(default = "default_axis")]
    pub axis: Vec3,
}

fn default_axis() -> Vec3 {
    [1.0, 0.0, 0.0]
}

impl SceneSpec {
    pub fn sphere(radius: f64, albedo: [f64; 3], background: [f64; 3]) -> SceneSpec {
        SceneSpec {
            primitive: Primitive::Sphere,
            center: [0.0; 3],
            size: radius,
            albedo,
            background,
            axis: default_axis(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.size >= 0.0) {
            return Err(Error::Geometry(format!(
                "primitive size {} is negative",
                self.size
            )));
        }
        let reach = self.center.iter().map(|c| c.abs()).fold(0.0, f64::max) + self.size;
        if reach > 1.0 + 1e-12 {
            return Err(Error::Geometry(format!(
                "primitive reaches {reach}, outside [−1,1]³"
            )));
        }
        if self.primitive == Primitive::TwoSphere && (vec3::norm(self.axis) - 1.0).abs() > 1e-9 {
            return Err(Error::Geometry(
                "two-sphere axis must be a unit vector".into(),
            ));
        }
        Ok(())
    }

    /// True when the ray meets the primitive at some `t > 0`.
    pub fn hits(&self, ray: &Ray) -> bool {
        match self.primitive {
            Primitive::Sphere => hits_sphere(ray, self.center, self.size),
            Primitive::Box => hits_cube(ray, self.center, self.size),
            Primitive::TwoSphere => {
                let off = vec3::scale(self.axis, self.size / 2.0);
                let r = self.size / 2.0;
                hits_sphere(ray, vec3::add(self.center, off), r)
                    || hits_sphere(ray, vec3::sub(self.center, off), r)
            }
        }
    }
}

fn hits_sphere(ray: &Ray, center: Vec3, radius: f64) -> bool {
    if radius <= 0.0 {
        return false;
    }
    // |o + t·d − c|² = r² with |d| = 1
    let oc = vec3::sub(ray.origin, center);
    let b = vec3::dot(oc, ray.direction);
    let c = vec3::dot(oc, oc) - radius * radius;
    let disc = b * b - c;
    disc >= 0.0 && -b + disc.sqrt() > 0.0
}

fn hits_cube(ray: &Ray, center: Vec3, half: f64) -> bool {
    if half <= 0.0 {
        return false;
    }
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..3 {
        let (lo, hi) = (center[i] - half, center[i] + half);
        let (o, d) = (ray.origin[i], ray.direction[i]);
        if d == 0.0 {
            if o < lo || o > hi {
                return false;
            }
            continue;
        }
        let (a, b) = ((lo - o) / d, (hi - o) / d);
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    t0 <= t1 && t1 > 0.0
}

/// Flat-shaded silhouette render: albedo where the pixel-center ray hits.
pub fn oracle_render(scene: &SceneSpec, pose: &CameraPose, size: usize) -> Result<Image> {
    scene.validate()?;
    let rays = make_camera_rays(pose, size, size)?;
    let data = rays
        .iter()
        .flat_map(|r| {
            if scene.hits(r) {
                scene.albedo
            } else {
                scene.background
            }
        })
        .collect();
    Image::new(size, size, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseMode {
    FullSphereSector,
    SingleAxis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoseDistribution {
    pub mode: PoseMode,
    pub radius: f64,
    /// `[lo, hi]` in radians, sector mode only.
    pub elevation: [f64; 2],
    /// Azimuth increment in radians, single-axis mode only.
    pub axis_step: f64,
    pub vertical_fov: f64,
}

impl Default for PoseDistribution {
    fn default() -> Self {
        PoseDistribution {
            mode: PoseMode::FullSphereSector,
            radius: 2.0,
            elevation: [-PI / 6.0, PI / 6.0],
            axis_step: 5f64.to_radians(),
            vertical_fov: PI / 3.0,
        }
    }
}

impl PoseDistribution {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let err = |key: &str, msg: &str| Error::Config {
            key: format!("{prefix}.{key}"),
            msg: msg.into(),
        };
        if !(self.radius > SCENE_RADIUS) {
            return Err(err(
                "radius",
                "must exceed √3 so the camera sits outside the scene bound",
            ));
        }
        let [lo, hi] = self.elevation;
        let limit = 89f64.to_radians();
        if !(lo <= hi && lo >= -limit && hi <= limit) {
            return Err(err("elevation", "needs lo <= hi within ±89°"));
        }
        if !(self.axis_step > 0.0 && self.axis_step <= 2.0 * PI) {
            return Err(err("axis_step", "must lie in (0, 2π]"));
        }
        if !(self.vertical_fov > 0.0 && self.vertical_fov < PI) {
            return Err(err("vertical_fov", "must lie in (0, π)"));
        }
        Ok(())
    }

    pub fn single_axis() -> PoseDistribution {
        PoseDistribution {
            mode: PoseMode::SingleAxis,
            ..PoseDistribution::default()
        }
    }

    /// Number of distinct azimuths in single-axis mode (72 at 5°).
    pub fn axis_positions(&self) -> usize {
        ((2.0 * PI / self.axis_step).round() as usize).max(1)
    }

    /// Camera at the given angles, looking at the origin.
    pub fn pose_at(&self, azimuth: f64, elevation: f64) -> CameraPose {
        let (ce, se) = (elevation.cos(), elevation.sin());
        let position = [
            self.radius * ce * azimuth.cos(),
            self.radius * ce * azimuth.sin(),
            self.radius * se,
        ];
        CameraPose::orbit(
            position,
            self.vertical_fov,
            self.radius - SCENE_RADIUS,
            self.radius + SCENE_RADIUS,
        )
    }

    /// The full single-axis circle, in azimuth order.
    pub fn axis_sweep(&self) -> Vec<CameraPose> {
        (0..self.axis_positions())
            .map(|i| self.pose_at(i as f64 * self.axis_step, 0.0))
            .collect()
    }
}

pub fn sample_pose(dist: &PoseDistribution, rng: &mut Rng) -> CameraPose {
    match dist.mode {
        PoseMode::FullSphereSector => {
            let azimuth = rng.random_range(0.0..2.0 * PI);
            let [lo, hi] = dist.elevation;
            let elevation = if lo < hi {
                rng.random_range(lo..hi)
            } else {
                lo
            };
            dist.pose_at(azimuth, elevation)
        }
        PoseMode::SingleAxis => {
            let i = rng.random_range(0..dist.axis_positions());
            dist.pose_at(i as f64 * dist.axis_step, 0.0)
        }
    }
}

/// Attribute ranges for procedural scenes; `None` keeps the template value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Randomize {
    pub color: Option<[f64; 2]>,
    pub size: Option<[f64; 2]>,
}

impl Default for Randomize {
    fn default() -> Self {
        Randomize {
            color: Some([0.2, 0.8]),
            size: Some([0.3, 0.7]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Procedural,
    PngDir,
}

#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub image: Image,
    pub scene: Option<SceneSpec>,
    pub pose: Option<CameraPose>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub items: Vec<DatasetItem>,
    pub size: usize,
    pub background: [f64; 3],
    pub provenance: Provenance,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn images(&self) -> Vec<Image> {
        self.items.iter().map(|i| i.image.clone()).collect()
    }
}

fn draw(range: Option<[f64; 2]>, fallback: f64, rng: &mut Rng) -> f64 {
    match range {
        Some([lo, hi]) if lo < hi => rng.random_range(lo..hi),
        Some([lo, _]) => lo,
        None => fallback,
    }
}

/// `n` scenes from `template` with randomized attributes, one view each.
pub fn make_dataset(
    n: usize,
    template: &SceneSpec,
    poses: &PoseDistribution,
    randomize: &Randomize,
    size: usize,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::contract("dataset needs at least one item"));
    }
    poses.validate("data.poses")?;
    let items = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, tags::DATASET, i as u64);
            let mut scene = *template;
            for c in 0..3 {
                scene.albedo[c] = draw(randomize.color, template.albedo[c], &mut r);
            }
            scene.size = draw(randomize.size, template.size, &mut r);
            let pose = sample_pose(poses, &mut r);
            Ok(DatasetItem {
                image: oracle_render(&scene, &pose, size)?,
                scene: Some(scene),
                pose: Some(pose),
            })
        })
        .collect::<Result<_>>()?;
    Ok(Dataset {
        items,
        size,
        background: template.background,
        provenance: Provenance::Procedural,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub images: Vec<String>,
    pub width: usize,
    pub height: usize,
    pub background: [f64; 3],
    pub provenance: Provenance,
    #[serde(default)]
    pub poses: Option<PoseDistribution>,
    #[serde(default)]
    pub scenes: Option<Vec<SceneSpec>>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Writes `NNNN.png` files and a manifest into `dir`.
pub fn write_dataset(
    ds: &Dataset,
    poses: Option<&PoseDistribution>,
    dir: &Path,
) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut images = Vec::with_capacity(ds.len());
    for (i, item) in ds.items.iter().enumerate() {
        let name = format!("{i:04}.png");
        raster::save_png(&item.image, &dir.join(&name))?;
        images.push(name);
    }
    let scenes: Option<Vec<SceneSpec>> = ds.items.iter().map(|i| i.scene).collect();
    let manifest = Manifest {
        images,
        width: ds.size,
        height: ds.size,
        background: ds.background,
        provenance: ds.provenance,
        poses: poses.cloned(),
        scenes,
    };
    let path = dir.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn square(
    images: Vec<Image>,
    background: [f64; 3],
    provenance: Provenance,
    origin: &Path,
) -> Result<Dataset> {
    let first = images
        .first()
        .ok_or_else(|| Error::contract(format!("{}: no images", origin.display())))?;
    if first.width != first.height || images.iter().any(|i| !i.same_size(first)) {
        return Err(Error::contract(format!(
            "{}: images must be square and share one resolution",
            origin.display()
        )));
    }
    let size = first.width;
    Ok(Dataset {
        items: images
            .into_iter()
            .map(|image| DatasetItem {
                image,
                scene: None,
                pose: None,
            })
            .collect(),
        size,
        background,
        provenance,
    })
}

/// Loads a dataset from a manifest file, or from a directory holding one.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let manifest_path = if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Config {
        key: manifest_path.display().to_string(),
        msg: e.to_string(),
    })?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let images = manifest
        .images
        .iter()
        .map(|name| raster::load_png(&dir.join(name)))
        .collect::<Result<Vec<_>>>()?;
    let mut ds = square(
        images,
        manifest.background,
        manifest.provenance,
        &manifest_path,
    )?;
    if ds.size != manifest.width || ds.size != manifest.height {
        return Err(Error::contract(format!(
            "{}: manifest says {}×{}, images are {}×{}",
            manifest_path.display(),
            manifest.width,
            manifest.height,
            ds.size,
            ds.size
        )));
    }
    if let Some(scenes) = manifest.scenes.filter(|s| s.len() == ds.len()) {
        for (item, s) in ds.items.iter_mut().zip(scenes) {
            item.scene = Some(s);
        }
    }
    Ok(ds)
}

/// Every `*.png` in `dir`, in file-name order.
pub fn load_png_dir(dir: &Path, background: [f64; 3]) -> Result<Dataset> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    let images = paths
        .iter()
        .map(|p| raster::load_png(p))
        .collect::<Result<Vec<_>>>()?;
    square(images, background, Provenance::PngDir, dir)
}
