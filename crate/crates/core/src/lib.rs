//! Desk-scale conditional diffusion lab.
//!
//! Everything runs on one CPU core in plain `f64`: a synthetic world of
//! articulated figures with pixel-exact annotation, dataset curation with a
//! keypoint-count gate, per-pixel fusion of control modalities, a small
//! ControlNet-style denoiser, region-weighted training, and hand-focused
//! evaluation metrics.

pub mod curation;
pub mod denoiser;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod nn;
pub mod pose;
pub mod raster;
pub mod rng;
pub mod schedule;
pub mod synthworld;

pub use error::{Error, Result};
