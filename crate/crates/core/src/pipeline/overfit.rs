//! Overfit the desk denoiser on a handful of cached windows.

use std::time::Instant;

use serde::Serialize;

use super::generate::{clip_seed, generate};
use super::{build_cache, synthesize_dataset, train_on, CacheConfig, DatasetSpec, ModelKind, RunConfig, TrainingData};
use crate::baselines::ceiling_rows;
use crate::metrics::{ClipPair, MetricSuite};
use crate::Result;

pub const WINDOWS: usize = 8;
pub const SAMPLE_STEPS: usize = 25;
/// Fixed noise draws per window when measuring the eps loss.
pub const LOSS_DRAWS: usize = 32;
/// Epochs between loss measurements; each epoch is two batches.
pub const MEASURE_EVERY: usize = 250;

#[derive(Debug, Clone, Serialize)]
pub struct OverfitReport {
    pub windows: usize,
    pub steps: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub sample_mel_mae: f64,
    pub ceiling_mel_mae: f64,
    pub train_seconds: f64,
    pub total_seconds: f64,
}

impl OverfitReport {
    pub fn loss_ratio(&self) -> f64 {
        self.final_loss / self.initial_loss
    }

    pub fn mel_gap(&self) -> f64 {
        self.sample_mel_mae - self.ceiling_mel_mae
    }
}

/// Train for `steps` optimizer steps on the first eight windows of a small
/// synthetic corpus, then sample those windows and score them against the
/// PCA reconstruction.
pub fn overfit(steps: usize) -> Result<OverfitReport> {
    let start = Instant::now();
    let spec = DatasetSpec {
        patterns: 4,
        bars: 2,
        bpm_range: (124.0, 132.0),
        ..DatasetSpec::default()
    };
    let cache = build_cache(
        &synthesize_dataset(&spec, 8)?,
        &CacheConfig {
            split_weights: [1.0, 0.0, 0.0],
            ..CacheConfig::default()
        },
    )?;
    let windows: Vec<_> = cache.records.iter().take(WINDOWS).collect();
    let config = RunConfig {
        diffusion_steps: vec![SAMPLE_STEPS],
        max_steps: Some(steps),
        epochs: usize::MAX / 2,
        val_draws: LOSS_DRAWS,
        ..RunConfig::default()
    };
    let kind = ModelKind::Diffusion {
        steps: SAMPLE_STEPS,
        rvq_ce: false,
    };
    let train_start = Instant::now();
    let data = TrainingData::new(windows.clone(), windows.clone(), &config, cache.frame_rate())?;
    let ckpt = train_on(&data, &cache.basis, &cache.codec, &config, kind, MEASURE_EVERY)?;
    let train_seconds = train_start.elapsed().as_secs_f64();
    let report = &ckpt.meta.report;
    let last = report.epochs.last().and_then(|e| e.val_loss).unwrap_or(report.initial_val_loss);

    let suite = MetricSuite::new(cache.sample_rate());
    let hop = cache.codec.config().hop;
    let (mut sample, mut ceiling) = (0.0, 0.0);
    for r in &windows {
        let g = generate(&ckpt, &cache.codec, &cache.basis, &r.grid, &r.window, clip_seed(7, &r.key()))?;
        let c = ceiling_rows(Some(&r.y), Some(&r.codes), Some(&cache.basis), &cache.codec, r.audio.len())?;
        let mae = |audio: &[f32]| {
            suite.mel_mae(&ClipPair {
                generated: audio,
                reference: &r.audio,
                frame_mask: r.mask(),
                sample_rate: cache.sample_rate(),
                hop,
            })
        };
        sample += mae(&g.audio)? / windows.len() as f64;
        ceiling += mae(&c.target_pca_recon)? / windows.len() as f64;
    }
    Ok(OverfitReport {
        windows: windows.len(),
        steps: report.epochs.last().map_or(0, |e| e.steps),
        initial_loss: report.initial_val_loss,
        final_loss: last,
        sample_mel_mae: sample,
        ceiling_mel_mae: ceiling,
        train_seconds,
        total_seconds: start.elapsed().as_secs_f64(),
    })
}
