//! Symbolic drum grid to audio latents: grid encoding, a toy frozen codec,
//! conditioning, diffusion and regression models, baselines and evaluation.

pub mod baselines;
pub mod codec;
pub mod conditioning;
pub mod diffusion;
pub mod error;
pub mod frames;
pub mod grid;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod pca;
pub mod rvq_ce;
pub mod service;
pub mod split;
pub mod stats;
pub mod timing;

pub use error::{Error, Result};
