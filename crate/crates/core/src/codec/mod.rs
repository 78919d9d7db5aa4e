//! Toy stand-in for a frozen neural codec.
//!
//! Analysis is a critically sampled lapped orthogonal transform (one latent
//! vector of `hop` coefficients per frame), so the unquantized path is exactly
//! invertible. Quantization is greedy residual VQ whose codebook entries live
//! in low-rank orthonormal projection subspaces of the latent space.

mod rvq;
mod transform;

pub use rvq::{numerical_rank, projection_stack_rank, CodeIndices, CodebookStack};
pub use transform::LappedTransform;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::frames::Frames;
use crate::timing::FrameLayout;
use crate::{Error, Result};

pub type SummedLatent = Frames;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecConfig {
    pub sample_rate: u32,
    pub hop: usize,
    /// Always `2 * hop` for the lapped transform.
    pub frame_length: usize,
    /// Always `hop`: one coefficient per new sample.
    pub latent_dim: usize,
    pub codebooks: usize,
    pub entries: usize,
    pub rank: usize,
    pub seed: u64,
    #[serde(default = "default_kmeans_iterations")]
    pub kmeans_iterations: usize,
}

fn default_kmeans_iterations() -> usize {
    12
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            hop: 256,
            frame_length: 512,
            latent_dim: 256,
            codebooks: 4,
            entries: 64,
            rank: 4,
            seed: 7,
            kmeans_iterations: default_kmeans_iterations(),
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.sample_rate == 0 {
            return Err(Error::validation("codec", "hop and sample_rate must be positive"));
        }
        if self.frame_length != 2 * self.hop {
            return Err(Error::validation("codec.frame_length", "must equal 2 * hop"));
        }
        if self.latent_dim != self.hop {
            return Err(Error::validation("codec.latent_dim", "must equal hop"));
        }
        if self.codebooks == 0 || self.entries == 0 || self.rank == 0 {
            return Err(Error::validation("codec", "codebooks, entries and rank must be positive"));
        }
        if self.codebooks * self.rank > self.latent_dim {
            return Err(Error::validation("codec.rank", "codebooks * rank exceeds latent_dim"));
        }
        Ok(())
    }

    pub fn layout(&self) -> FrameLayout {
        FrameLayout {
            sample_rate: self.sample_rate,
            hop: self.hop,
        }
    }

    pub fn frame_rate(&self) -> f64 {
        self.layout().frame_rate()
    }
}

/// Analysis transform plus a frozen codebook stack.
#[derive(Debug, Clone)]
pub struct Codec {
    config: CodecConfig,
    transform: LappedTransform,
    stack: CodebookStack,
}

impl Codec {
    pub fn new(config: CodecConfig, stack: CodebookStack) -> Result<Self> {
        config.validate()?;
        if stack.dim() != config.latent_dim
            || stack.codebooks() != config.codebooks
            || stack.entries_per_book() != config.entries
            || stack.projection(0).ncols() != config.rank
        {
            return Err(Error::Shape("codebook stack does not match codec config".into()));
        }
        Ok(Self {
            transform: LappedTransform::new(config.hop),
            config,
            stack,
        })
    }

    pub fn random(config: CodecConfig) -> Result<Self> {
        config.validate()?;
        let stack = CodebookStack::random(
            config.latent_dim,
            config.codebooks,
            config.entries,
            config.rank,
            config.seed,
        )?;
        Self::new(config, stack)
    }

    /// Fit the codebooks on training clips and freeze them.
    pub fn fit<'a>(config: CodecConfig, training_audio: impl IntoIterator<Item = &'a [f32]>) -> Result<Self> {
        config.validate()?;
        let transform = LappedTransform::new(config.hop);
        let layout = config.layout();
        let latents: Vec<Frames> = training_audio
            .into_iter()
            .map(|a| transform.analyze(a, layout.frame_count(a.len())))
            .collect();
        let refs: Vec<&Frames> = latents.iter().collect();
        let stack = CodebookStack::fit(
            &refs,
            config.codebooks,
            config.entries,
            config.rank,
            config.seed,
            config.kmeans_iterations,
        )?;
        Self::new(config, stack)
    }

    pub fn config(&self) -> &CodecConfig {
        &self.config
    }

    pub fn stack(&self) -> &CodebookStack {
        &self.stack
    }

    pub fn layout(&self) -> FrameLayout {
        self.config.layout()
    }

    /// Pre-quantizer frame latents `u`, `ceil(samples / hop)` frames.
    pub fn encode(&self, audio: &[f32]) -> Result<Frames> {
        if audio.is_empty() {
            return Err(Error::validation("audio", "must be non-empty"));
        }
        Ok(self.transform.analyze(audio, self.layout().frame_count(audio.len())))
    }

    pub fn quantize(&self, u: &Frames) -> Result<(CodeIndices, SummedLatent)> {
        self.stack.quantize(u)
    }

    /// Synthesis of `samples` samples from frame latents.
    pub fn decode(&self, y: &Frames, samples: usize) -> Result<Vec<f32>> {
        if y.dim() != self.config.latent_dim {
            return Err(Error::Shape(format!("latent dim {} vs {}", y.dim(), self.config.latent_dim)));
        }
        if y.rows() < self.layout().frame_count(samples) {
            return Err(Error::Shape(format!("{} frames cannot cover {samples} samples", y.rows())));
        }
        Ok(self.transform.synthesize(y, samples))
    }

    /// Decode the summed entries selected by `q`.
    pub fn decode_codes(&self, q: &CodeIndices, samples: usize) -> Result<Vec<f32>> {
        self.decode(&self.stack.lookup(q)?, samples)
    }

    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).expect("config serializes"));
        h.update(self.stack.to_bytes());
        hex::encode(h.finalize())
    }
}
