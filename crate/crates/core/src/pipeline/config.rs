use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::DatasetSpec;
use crate::baselines::RegressorConfig;
use crate::codec::CodecConfig;
use crate::conditioning::FrontendConfig;
use crate::diffusion::{DenoiserConfig, SUPPORTED_STEPS};
use crate::rvq_ce::AuxLossConfig;
use crate::{Error, Result};

/// Model scale. `Desk` is the CPU configuration; `Tiny` exists for smoke tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Tiny,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub preset: Preset,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stops training after this many optimizer steps when set.
    pub max_steps: Option<usize>,
    /// Seed of batching, noise draws and dropout.
    pub seed: u64,
    /// Base seed of evaluation samples and statistics.
    pub eval_seed: u64,
    /// Denoising step counts with a plain diffusion checkpoint.
    pub diffusion_steps: Vec<usize>,
    /// Denoising step counts with an RVQ-CE checkpoint.
    pub ce_steps: Vec<usize>,
    pub lambda_ce: f64,
    pub components: usize,
    pub frontend_trainable: bool,
    /// Noise draws per validation window.
    pub val_draws: usize,
    pub fad_runs: usize,
    pub bootstrap_resamples: usize,
    pub guidance_scale: f64,
    pub samples_per_clip: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Desk,
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            batch_size: 4,
            epochs: 30,
            max_steps: None,
            seed: 1234,
            eval_seed: 2024,
            diffusion_steps: SUPPORTED_STEPS.to_vec(),
            ce_steps: vec![6, 12, 25],
            lambda_ce: 0.10,
            components: 16,
            frontend_trainable: false,
            val_draws: 4,
            fad_runs: crate::metrics::fad::DEFAULT_RUNS,
            bootstrap_resamples: crate::stats::RESAMPLES,
            guidance_scale: 1.0,
            samples_per_clip: 1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::validation("learning_rate", "must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::validation("weight_decay", "must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size", "must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::validation("epochs", "must be positive"));
        }
        if self.max_steps == Some(0) {
            return Err(Error::validation("max_steps", "must be positive"));
        }
        for &n in self.diffusion_steps.iter().chain(&self.ce_steps) {
            if !SUPPORTED_STEPS.contains(&n) {
                return Err(Error::validation("steps", format!("{n} is not one of {SUPPORTED_STEPS:?}")));
            }
        }
        if self.components == 0 {
            return Err(Error::validation("components", "must be positive"));
        }
        if self.val_draws == 0 || self.fad_runs == 0 || self.bootstrap_resamples == 0 {
            return Err(Error::validation("evaluation", "draw, run and resample counts must be positive"));
        }
        if self.guidance_scale != 1.0 {
            return Err(Error::validation("guidance_scale", "only unguided sampling (1.0) is supported"));
        }
        if self.samples_per_clip != 1 {
            return Err(Error::validation("samples_per_clip", "statistics use exactly one sample per clip"));
        }
        self.aux_loss().validate()
    }

    pub fn aux_loss(&self) -> AuxLossConfig {
        AuxLossConfig {
            lambda_ce: self.lambda_ce,
            enabled: true,
        }
    }

    pub fn frontend(&self) -> FrontendConfig {
        let base = FrontendConfig {
            trainable: self.frontend_trainable,
            ..FrontendConfig::default()
        };
        match self.preset {
            Preset::Desk => base,
            Preset::Tiny => FrontendConfig {
                branch_dim: 16,
                stem_channels: 8,
                lstm_hidden: 8,
                ..base
            },
        }
    }

    pub fn denoiser(&self, cond_dim: usize) -> DenoiserConfig {
        let desk = DenoiserConfig::desk(self.components, cond_dim);
        match self.preset {
            Preset::Desk => desk,
            Preset::Tiny => DenoiserConfig {
                width: 32,
                layers: 1,
                heads: 2,
                ..desk
            },
        }
    }

    pub fn regressor(&self, cond_dim: usize) -> RegressorConfig {
        let desk = RegressorConfig::desk(self.components, cond_dim);
        match self.preset {
            Preset::Desk => desk,
            Preset::Tiny => RegressorConfig {
                width: 32,
                layers: 1,
                heads: 2,
                ..desk
            },
        }
    }
}

/// Everything `build-cache` needs besides the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CacheConfig {
    pub codec: CodecConfig,
    pub components: usize,
    /// Train, validation and test shares of source performances.
    pub split_weights: [f64; 3],
    pub split_seed: u64,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            codec: CodecConfig::default(),
            components: 16,
            split_weights: [11_523.0, 1_534.0, 1_733.0],
            split_seed: 17,
        }
    }
}

/// The single configuration file: `[dataset]`, `[cache]` and `[run]` sections.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectConfig {
    pub dataset: DatasetSpec,
    pub cache: CacheConfig,
    pub run: RunConfig,
}

impl ProjectConfig {
    /// Read TOML (`.toml`) or JSON (anything else); missing keys take defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: Self = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::validation("config", e.to_string()))?
        } else {
            serde_json::from_str(&text)?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.cache.codec.validate()?;
        if self.cache.components != self.run.components {
            return Err(Error::validation("run.components", "must match cache.components"));
        }
        self.run.validate()
    }
}
