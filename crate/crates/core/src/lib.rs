//! A GAN whose generator is a hypernetwork: noise becomes low-rank
//! modulations of a shared radiance field, which is volume-rendered and
//! judged by a 2D critic.

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod discriminator;
pub mod error;
pub mod field;
pub mod generator;
mod mc_tables;
pub mod mesh;
pub mod metrics;
pub mod raster;
pub mod render;
pub mod rng;
pub mod trainer;
pub mod vec3;

pub use error::{Error, Result};
