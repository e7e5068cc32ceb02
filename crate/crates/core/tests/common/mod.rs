#![allow(dead_code)]

use hng_core::config::RunConfig;
use hng_core::discriminator::DiscriminatorConfig;
use hng_core::field::FieldConfig;
use hng_core::generator::GeneratorConfig;
use hng_core::render::RenderConfig;

/// A model small enough for per-test training runs.
pub fn tiny_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.field = FieldConfig {
        hidden_layers: 1,
        hidden_width: 8,
        pe_frequencies: 1,
        fmm_rank: 2,
        ..FieldConfig::default()
    };
    cfg.generator = GeneratorConfig {
        z_dim: 4,
        trunk_layers: 1,
        trunk_width: 8,
        head_init_scale: 0.05,
    };
    cfg.discriminator = DiscriminatorConfig {
        image_size: 8,
        channels: vec![2, 3],
    };
    cfg.render = RenderConfig {
        width: 8,
        height: 8,
        samples_per_ray: 4,
        ..RenderConfig::default()
    };
    cfg.train.batch_size = 2;
    cfg.train.total_steps = 10;
    cfg.data.n = 8;
    cfg.validate().expect("tiny config is valid");
    cfg
}
