//! The single JSON document configuring a run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{PoseDistribution, Primitive, Randomize, SceneSpec};
use crate::discriminator::DiscriminatorConfig;
use crate::error::{Error, Result};
use crate::field::FieldConfig;
use crate::generator::GeneratorConfig;
use crate::render::RenderConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub d_steps_per_g_step: usize,
    pub total_steps: u64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Starting standard deviation; decays linearly to zero at `total_steps`.
    pub instance_noise_sigma: f64,
    pub rng_seed: u64,
    pub metrics_every: u64,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            d_steps_per_g_step: 1,
            total_steps: 20_000,
            lr_g: 2.5e-3,
            lr_d: 2.5e-3,
            beta1: 0.0,
            beta2: 0.99,
            instance_noise_sigma: 0.05,
            rng_seed: 0,
            metrics_every: 100,
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        let err = |key: &str, msg: &str| Error::Config {
            key: format!("train.{key}"),
            msg: msg.into(),
        };
        if self.batch_size < 1 {
            return Err(err("batch_size", "must be >= 1"));
        }
        if self.d_steps_per_g_step < 1 {
            return Err(err("d_steps_per_g_step", "must be >= 1"));
        }
        for (key, lr) in [("lr_g", self.lr_g), ("lr_d", self.lr_d)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(err(key, "must be a positive number"));
            }
        }
        for (key, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(err(key, "must lie in [0, 1)"));
            }
        }
        if !(self.instance_noise_sigma >= 0.0 && self.instance_noise_sigma.is_finite()) {
            return Err(err("instance_noise_sigma", "must be >= 0"));
        }
        if self.metrics_every < 1 {
            return Err(err("metrics_every", "must be >= 1"));
        }
        if self.checkpoint_every < 1 {
            return Err(err("checkpoint_every", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Procedural,
    PngDir,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Image directory (or manifest) for `png_dir`.
    pub path: Option<PathBuf>,
    pub n: usize,
    pub primitive: Primitive,
    pub size: f64,
    pub albedo: [f64; 3],
    pub randomize: Randomize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Procedural,
            path: None,
            n: 2000,
            primitive: Primitive::Sphere,
            size: 0.5,
            albedo: [0.8, 0.3, 0.2],
            randomize: Randomize::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricSettings {
    pub kid_downsample: usize,
    pub eval_samples: usize,
}

impl Default for MetricSettings {
    fn default() -> Self {
        MetricSettings {
            kid_downsample: 16,
            eval_samples: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshSettings {
    pub resolution: usize,
    pub threshold: f64,
}

impl Default for MeshSettings {
    fn default() -> Self {
        MeshSettings {
            resolution: 64,
            threshold: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub field: FieldConfig,
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub discriminator: DiscriminatorConfig,
    #[serde(default = "default_render")]
    pub render: RenderConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub poses: PoseDistribution,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub metrics: MetricSettings,
    #[serde(default)]
    pub mesh: MeshSettings,
}

// training renders at the critic's resolution
fn default_render() -> RenderConfig {
    RenderConfig {
        width: 16,
        height: 16,
        ..RenderConfig::default()
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            field: FieldConfig::default(),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            render: default_render(),
            train: TrainConfig::default(),
            poses: PoseDistribution::default(),
            data: DataConfig::default(),
            metrics: MetricSettings::default(),
            mesh: MeshSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.field.validate()?;
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.render.validate()?;
        self.train.validate()?;
        self.poses.validate("poses")?;
        let err = |key: &str, msg: String| Error::Config {
            key: key.into(),
            msg,
        };
        if self.render.width != self.render.height {
            return Err(err(
                "render.height",
                format!("must equal render.width ({})", self.render.width),
            ));
        }
        if self.discriminator.image_size != self.render.width {
            return Err(err(
                "discriminator.image_size",
                format!("must equal the render size {}", self.render.width),
            ));
        }
        if self.data.n < 1 {
            return Err(err("data.n", "must be >= 1".into()));
        }
        if self.data.source == DataSource::PngDir && self.data.path.is_none() {
            return Err(err(
                "data.path",
                "required when data.source is png_dir".into(),
            ));
        }
        self.scene_template()
            .validate()
            .map_err(|e| err("data.size", e.to_string()))?;
        for (key, range) in [
            ("data.randomize.color", self.data.randomize.color),
            ("data.randomize.size", self.data.randomize.size),
        ] {
            if let Some([lo, hi]) = range {
                if !(lo <= hi && lo >= 0.0 && hi <= 1.0) {
                    return Err(err(key, "needs 0 <= lo <= hi <= 1".into()));
                }
            }
        }
        if let Some([_, hi]) = self.data.randomize.size {
            let mut s = self.scene_template();
            s.size = hi;
            s.validate()
                .map_err(|e| err("data.randomize.size", e.to_string()))?;
        }
        if self.metrics.kid_downsample < 1 {
            return Err(err("metrics.kid_downsample", "must be >= 1".into()));
        }
        if self.metrics.eval_samples < 2 {
            return Err(err("metrics.eval_samples", "must be >= 2".into()));
        }
        if self.mesh.resolution < 8 {
            return Err(err("mesh.resolution", "must be >= 8".into()));
        }
        if !self.mesh.threshold.is_finite() {
            return Err(err("mesh.threshold", "must be finite".into()));
        }
        Ok(())
    }

    pub fn scene_template(&self) -> SceneSpec {
        SceneSpec {
            primitive: self.data.primitive,
            size: self.data.size,
            albedo: self.data.albedo,
            ..SceneSpec::sphere(self.data.size, self.data.albedo, self.render.background)
        }
    }

    /// Parses and validates a JSON document; errors name the key path.
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            Error::Config {
                key: if key == "." { "<root>".into() } else { key },
                msg: e.into_inner().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::from_json(&text)
}
