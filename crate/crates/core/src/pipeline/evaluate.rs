//! Test-split evaluation: system rows, paired contrasts and runtime.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::cache::{Cache, WindowRecord};
use super::config::RunConfig;
use super::generate::{clip_seed, generate};
use super::train::{Checkpoint, ModelKind};
use super::wav;
use crate::baselines::{ceiling_rows, RetrievalIndex, RetrievalItem};
use crate::grid::{nn_feature_vector, render_procedural};
use crate::metrics::fad::{fad_infinity, Embedder, MelStats};
use crate::metrics::{mean_metrics, real_time_factor, ClipMetrics, ClipPair, MetricRow, MetricSuite};
use crate::split::Split;
use crate::stats::{best_vs_rest, PairedContrast, SystemValues};
use crate::{Error, Result};

pub const METRIC_COLUMNS: [&str; 5] = ["system", "system_type", "clips", "fad_inf", "fad_r2"];
pub const CONTRAST_COLUMNS: [&str; 8] = ["metric", "system_a", "system_b", "estimate", "lo", "hi", "p", "p_holm"];
pub const RUNTIME_COLUMNS: [&str; 5] = ["system", "clips", "generation_seconds", "audio_seconds", "rtf"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeRow {
    pub system: String,
    pub clips: usize,
    pub generation_seconds: f64,
    pub audio_seconds: f64,
    pub rtf: f64,
}

/// Generated clips of one system, in test-split order.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemOutput {
    pub system: String,
    pub system_type: &'static str,
    pub clips: Vec<Vec<f32>>,
    pub generation_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub keys: Vec<String>,
    pub rows: Vec<MetricRow>,
    pub clip_metrics: BTreeMap<String, Vec<ClipMetrics>>,
    pub contrasts: Vec<PairedContrast>,
    pub runtime: Vec<RuntimeRow>,
    pub outputs: Vec<SystemOutput>,
    /// Systems requested by the run config whose checkpoint was absent.
    pub omitted: Vec<String>,
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let out = f()?;
    Ok((out, start.elapsed().as_secs_f64()))
}

/// Audio for every non-learned row over the test windows.
fn reference_systems(cache: &Cache, test: &[&WindowRecord]) -> Result<Vec<SystemOutput>> {
    let mut codec_recon = Vec::new();
    let mut pca_recon = Vec::new();
    let mut source = Vec::new();
    for r in test {
        let c = ceiling_rows(Some(&r.y), Some(&r.codes), Some(&cache.basis), &cache.codec, r.audio.len())?;
        codec_recon.push(c.target_codec_recon);
        pca_recon.push(c.target_pca_recon);
        source.push(c.source_code_decode);
    }
    let sr = cache.sample_rate();
    let (symbolic, symbolic_s) = timed(|| Ok(test.iter().map(|r| render_procedural(&r.grid, &r.window, sr)).collect()))?;
    let index = RetrievalIndex::build(cache.records.iter().map(|r| {
        (
            r.split,
            RetrievalItem {
                id: r.key(),
                features: nn_feature_vector(&r.grid, &r.window),
                codes: r.codes.clone(),
            },
        )
    }).filter(|(s, _)| *s == Split::Train))?;
    let (retrieval, retrieval_s) = timed(|| {
        test.iter()
            .map(|r| {
                let hit = index.retrieve(&nn_feature_vector(&r.grid, &r.window))?;
                cache.codec.decode_codes(&index.codes_for(hit, r.window.frames()), r.audio.len())
            })
            .collect()
    })?;
    let row = |system: &str, system_type, clips, generation_seconds| SystemOutput {
        system: system.to_string(),
        system_type,
        clips,
        generation_seconds,
    };
    Ok(vec![
        row("target_codec_recon", "ceiling", codec_recon, None),
        row("target_pca_recon", "ceiling", pca_recon, None),
        row("source_code_decode", "ceiling", source, None),
        row("symbolic_render", "baseline", symbolic, Some(symbolic_s)),
        row("retrieval", "baseline", retrieval, Some(retrieval_s)),
    ])
}

/// Audio of a learned system through the shared generation path.
pub fn learned_system(cache: &Cache, test: &[&WindowRecord], checkpoint: &Checkpoint, seed: u64) -> Result<SystemOutput> {
    checkpoint.check_compatible(cache)?;
    let mut clips = Vec::with_capacity(test.len());
    let mut seconds = 0.0;
    for r in test {
        let g = generate(checkpoint, &cache.codec, &cache.basis, &r.grid, &r.window, clip_seed(seed, &r.key()))?;
        seconds += g.seconds;
        clips.push(g.audio);
    }
    Ok(SystemOutput {
        system: checkpoint.name(),
        system_type: match checkpoint.meta.kind {
            ModelKind::Regressor => "baseline",
            ModelKind::Diffusion { .. } => "diffusion",
        },
        clips,
        generation_seconds: Some(seconds),
    })
}

/// Evaluate every available system on the test split.
///
/// Requested checkpoints that are missing are left out with a warning.
pub fn evaluate(cache: &Cache, checkpoints: &[Checkpoint], config: &RunConfig) -> Result<Evaluation> {
    config.validate()?;
    let test: Vec<&WindowRecord> = cache.split(Split::Test).collect();
    if test.len() < 2 {
        return Err(Error::Degenerate(format!("{} test windows; at least two are needed", test.len())));
    }
    let mut outputs = reference_systems(cache, &test)?;
    let mut omitted = Vec::new();
    for kind in ModelKind::planned(config) {
        match checkpoints.iter().find(|c| c.meta.kind == kind) {
            Some(c) => outputs.push(learned_system(cache, &test, c, config.eval_seed)?),
            None => {
                log::warn!("no checkpoint for {kind}; row omitted");
                omitted.push(kind.to_string());
            }
        }
    }
    score(cache, &test, outputs, omitted, config)
}

fn score(
    cache: &Cache,
    test: &[&WindowRecord],
    outputs: Vec<SystemOutput>,
    omitted: Vec<String>,
    config: &RunConfig,
) -> Result<Evaluation> {
    let sr = cache.sample_rate();
    let hop = cache.codec.config().hop;
    let suite = MetricSuite::new(sr);
    let embedder = MelStats::new(sr);
    let reference_emb: Vec<Vec<f64>> = test.iter().map(|r| embedder.embed(&r.audio)).collect();
    let audio_seconds: f64 = test.iter().map(|r| r.audio.len() as f64 / sr as f64).sum();

    let mut rows = Vec::new();
    let mut clip_metrics = BTreeMap::new();
    let mut runtime = Vec::new();
    for out in &outputs {
        let metrics = out
            .clips
            .iter()
            .zip(test)
            .map(|(g, r)| {
                suite.evaluate(&ClipPair {
                    generated: g,
                    reference: &r.audio,
                    frame_mask: r.mask(),
                    sample_rate: sr,
                    hop,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let emb: Vec<Vec<f64>> = out.clips.iter().map(|g| embedder.embed(g)).collect();
        let fad = fad_infinity(&emb, &reference_emb, config.fad_runs, config.eval_seed)?;
        let rtf = out
            .generation_seconds
            .map(|s| real_time_factor(s, audio_seconds))
            .transpose()?;
        if let (Some(s), Some(rtf)) = (out.generation_seconds, rtf) {
            runtime.push(RuntimeRow {
                system: out.system.clone(),
                clips: test.len(),
                generation_seconds: s,
                audio_seconds,
                rtf,
            });
        }
        rows.push(MetricRow {
            system: out.system.clone(),
            system_type: out.system_type.to_string(),
            clips: test.len(),
            fad_inf: fad.fad_inf,
            fad_r2: fad.r2,
            means: mean_metrics(&metrics)?,
            rtf,
        });
        clip_metrics.insert(out.system.clone(), metrics);
    }

    let mut contrasts = Vec::new();
    let compared: Vec<&SystemOutput> = outputs.iter().filter(|o| o.system_type != "ceiling").collect();
    if compared.len() >= 2 {
        for (m, name) in ClipMetrics::NAMES.iter().enumerate() {
            let values: Vec<Vec<f64>> = compared
                .iter()
                .map(|o| clip_metrics[&o.system].iter().map(|c| c.values()[m]).collect())
                .collect();
            let systems: Vec<SystemValues> = compared
                .iter()
                .zip(&values)
                .map(|(o, v)| SystemValues {
                    system: &o.system,
                    values: v,
                })
                .collect();
            let seed = config.eval_seed.wrapping_add(100_000 * m as u64);
            contrasts.extend(best_vs_rest(
                name,
                ClipMetrics::higher_is_better(name),
                &systems,
                config.bootstrap_resamples,
                seed,
            )?);
        }
    }
    Ok(Evaluation {
        keys: test.iter().map(|r| r.key()).collect(),
        rows,
        clip_metrics,
        contrasts,
        runtime,
        outputs,
        omitted,
    })
}

fn csv_line(fields: impl IntoIterator<Item = String>) -> String {
    let mut s = fields.into_iter().collect::<Vec<_>>().join(",");
    s.push('\n');
    s
}

impl Evaluation {
    pub fn row(&self, system: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.system == system)
    }

    /// `system,system_type,clips,fad_inf,fad_r2` then one column per paired metric.
    pub fn metric_csv(&self) -> String {
        let header = METRIC_COLUMNS.iter().chain(ClipMetrics::NAMES.iter()).map(|s| s.to_string());
        let mut out = csv_line(header);
        for r in &self.rows {
            let fixed = [r.system.clone(), r.system_type.clone(), r.clips.to_string(), r.fad_inf.to_string(), r.fad_r2.to_string()];
            out.push_str(&csv_line(fixed.into_iter().chain(r.means.iter().map(|v| v.to_string()))));
        }
        out
    }

    pub fn contrast_csv(&self) -> String {
        let mut out = csv_line(CONTRAST_COLUMNS.iter().map(|s| s.to_string()));
        for c in &self.contrasts {
            out.push_str(&csv_line([
                c.metric.clone(),
                c.system_a.clone(),
                c.system_b.clone(),
                c.estimate.to_string(),
                c.lo.to_string(),
                c.hi.to_string(),
                c.p.to_string(),
                c.p_holm.to_string(),
            ]));
        }
        out
    }

    /// Wall-clock timings; kept apart so the other CSVs are reproducible.
    pub fn runtime_csv(&self) -> String {
        let mut out = csv_line(RUNTIME_COLUMNS.iter().map(|s| s.to_string()));
        for r in &self.runtime {
            out.push_str(&csv_line([
                r.system.clone(),
                r.clips.to_string(),
                r.generation_seconds.to_string(),
                r.audio_seconds.to_string(),
                r.rtf.to_string(),
            ]));
        }
        out
    }

    /// `metrics.csv`, `contrasts.csv`, `runtime.csv`, and optionally one
    /// 16-bit WAV per system and clip under `audio/`.
    pub fn save(&self, dir: &Path, sample_rate: u32, with_audio: bool) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("metrics.csv"), self.metric_csv())?;
        std::fs::write(dir.join("contrasts.csv"), self.contrast_csv())?;
        std::fs::write(dir.join("runtime.csv"), self.runtime_csv())?;
        if with_audio {
            for out in &self.outputs {
                let sys_dir = dir.join("audio").join(&out.system);
                std::fs::create_dir_all(&sys_dir)?;
                for (key, clip) in self.keys.iter().zip(&out.clips) {
                    wav::write_pcm16(&sys_dir.join(format!("{}.wav", key.replace('#', "_"))), clip, sample_rate)?;
                }
            }
        }
        Ok(())
    }
}
