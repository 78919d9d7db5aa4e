//! Seeded synthetic drum corpus.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::wav;
use crate::grid::{build_grid, render_span, DrumEvent, DrumGrid, Timbre, DEFAULT_ARTICULATIONS, FAMILIES};
use crate::{Error, Result};

pub const STEPS_PER_BAR: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub patterns: usize,
    /// Four-beat bars per performance.
    pub bars: usize,
    pub bpm_range: (f64, f64),
    /// Multiplies each family's per-step onset probability.
    pub family_weights: [f64; FAMILIES],
    pub articulation_weights: [f64; DEFAULT_ARTICULATIONS],
    pub velocity_range: (f64, f64),
    /// Uniform onset timing jitter, seconds.
    pub timing_jitter: f64,
    /// Chance that a pattern cell flips in a given bar.
    pub variation: f64,
    /// Relative spread of per-clip voice pitch and decay.
    pub timbre_spread: f64,
    pub gain_range: (f64, f64),
    pub sample_rate: u32,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            patterns: 100,
            bars: 4,
            bpm_range: (100.0, 132.0),
            family_weights: [1.0; FAMILIES],
            articulation_weights: [0.55, 0.25, 0.12, 0.08],
            velocity_range: (0.45, 1.0),
            timing_jitter: 0.004,
            variation: 0.08,
            timbre_spread: 0.12,
            gain_range: (0.3, 0.7),
            sample_rate: 16_000,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.patterns == 0 || self.bars == 0 {
            return Err(Error::validation("dataset", "patterns and bars must be positive"));
        }
        let (lo, hi) = self.bpm_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::validation("dataset.bpm_range", "need 0 < low <= high"));
        }
        if self.family_weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::validation("dataset.family_weights", "must be non-negative"));
        }
        if self.articulation_weights.iter().any(|w| !(*w >= 0.0)) || self.articulation_weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::validation("dataset.articulation_weights", "need a positive total"));
        }
        let (vlo, vhi) = self.velocity_range;
        if !(vlo > 0.0 && vhi >= vlo && vhi <= 1.0) {
            return Err(Error::validation("dataset.velocity_range", "need 0 < low <= high <= 1"));
        }
        if !(0.0..=1.0).contains(&self.variation) || !(0.0..0.5).contains(&self.timbre_spread) {
            return Err(Error::validation("dataset", "variation in [0, 1], timbre_spread in [0, 0.5)"));
        }
        if !(self.timing_jitter >= 0.0 && self.timing_jitter < 0.02) {
            return Err(Error::validation("dataset.timing_jitter", "must be in [0, 0.02)"));
        }
        let (glo, ghi) = self.gain_range;
        if !(glo > 0.0 && ghi >= glo) {
            return Err(Error::validation("dataset.gain_range", "need 0 < low <= high"));
        }
        Ok(())
    }
}

/// Onset probability of family `f` at sixteenth step `s`.
fn step_probability(f: usize, s: usize) -> f64 {
    match f {
        0 => match s {
            _ if s % 8 == 0 => 0.9,
            _ if s % 4 == 0 => 0.3,
            _ if s % 2 == 0 => 0.12,
            _ => 0.04,
        },
        1 => if s % 8 == 4 { 0.85 } else { 0.06 },
        2 => if s % 2 == 0 { 0.75 } else { 0.25 },
        3 => if s % 4 == 2 { 0.12 } else { 0.02 },
        4 | 5 => 0.04,
        6 => if s == 0 { 0.15 } else { 0.0 },
        _ => 0.08,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Performance {
    pub id: String,
    pub bpm: f64,
    pub duration: f64,
    pub events: Vec<DrumEvent>,
    pub timbre: Timbre,
    #[serde(skip)]
    pub audio: Vec<f32>,
}

impl Performance {
    pub fn grid(&self) -> Result<DrumGrid> {
        build_grid(&self.events, self.bpm, self.duration)
    }

    pub fn beat_times(&self) -> Vec<f64> {
        crate::grid::metronome_beats(self.bpm, self.duration)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub spec: DatasetSpec,
    pub seed: u64,
    pub performances: Vec<Performance>,
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn weighted(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

fn vary_timbre(rng: &mut ChaCha8Rng, spread: f64, gain: f64) -> Timbre {
    let mut t = Timbre::default();
    for v in &mut t.voices {
        v.freq *= 1.0 + spread * (2.0 * rng.random::<f64>() - 1.0) * 0.6;
        v.decay *= 1.0 + spread * (2.0 * rng.random::<f64>() - 1.0) * 2.0;
        v.noise = (v.noise + spread * (2.0 * rng.random::<f64>() - 1.0)).clamp(0.0, 1.0);
    }
    t.gain = gain;
    t.noise_seed = rng.random();
    t
}

fn synthesize_one(spec: &DatasetSpec, index: usize, rng: &mut ChaCha8Rng) -> Result<Performance> {
    let bpm = uniform(rng, spec.bpm_range);
    let step = 60.0 / bpm / 4.0;
    let duration = spec.bars as f64 * STEPS_PER_BAR as f64 * step;
    let mut pattern = [[None::<(f64, usize)>; STEPS_PER_BAR]; FAMILIES];
    for (f, lane) in pattern.iter_mut().enumerate() {
        for (s, cell) in lane.iter_mut().enumerate() {
            if rng.random::<f64>() < (step_probability(f, s) * spec.family_weights[f]).min(1.0) {
                *cell = Some((uniform(rng, spec.velocity_range), weighted(rng, &spec.articulation_weights)));
            }
        }
    }
    let mut events = Vec::new();
    for bar in 0..spec.bars {
        for s in 0..STEPS_PER_BAR {
            let base = (bar * STEPS_PER_BAR + s) as f64 * step;
            for (f, lane) in pattern.iter().enumerate() {
                let mut cell = lane[s];
                if rng.random::<f64>() < spec.variation {
                    cell = match cell {
                        Some(_) => None,
                        None if step_probability(f, s) * spec.family_weights[f] > 0.0 => Some((
                            uniform(rng, spec.velocity_range),
                            weighted(rng, &spec.articulation_weights),
                        )),
                        None => None,
                    };
                }
                if let Some((velocity, articulation)) = cell {
                    let jitter = spec.timing_jitter * (2.0 * rng.random::<f64>() - 1.0);
                    let time = (base + jitter).clamp(0.0, duration - 1e-6);
                    events.push(DrumEvent {
                        family: f,
                        time,
                        velocity: (velocity * (1.0 + 0.1 * (2.0 * rng.random::<f64>() - 1.0))).clamp(0.05, 1.0),
                        articulation,
                    });
                }
            }
        }
    }
    events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.family.cmp(&b.family)));
    let gain = uniform(rng, spec.gain_range);
    let timbre = vary_timbre(rng, spec.timbre_spread, gain);
    let grid = build_grid(&events, bpm, duration)?;
    let audio = render_span(&grid, 0.0, duration, spec.sample_rate, &timbre);
    Ok(Performance {
        id: format!("perf{index:04}"),
        bpm,
        duration,
        events,
        timbre,
        audio,
    })
}

/// Deterministic corpus: the same spec and seed always give the same events and audio.
pub fn synthesize_dataset(spec: &DatasetSpec, seed: u64) -> Result<Corpus> {
    spec.validate()?;
    let performances = (0..spec.patterns)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            synthesize_one(spec, i, &mut rng)
        })
        .collect::<Result<_>>()?;
    Ok(Corpus {
        spec: spec.clone(),
        seed,
        performances,
    })
}

impl Corpus {
    /// SHA-256 over the metadata JSON and every audio sample.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("corpus metadata serializes"));
        for p in &self.performances {
            for s in &p.audio {
                h.update(s.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// `corpus.json` plus one float WAV per performance under `audio/`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("audio"))?;
        std::fs::write(dir.join("corpus.json"), serde_json::to_vec_pretty(self)?)?;
        for p in &self.performances {
            wav::write_f32(&dir.join("audio").join(format!("{}.wav", p.id)), &p.audio, self.spec.sample_rate)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mut corpus: Corpus = serde_json::from_slice(&std::fs::read(dir.join("corpus.json"))?)?;
        for p in &mut corpus.performances {
            let (audio, sr) = wav::read_f32(&dir.join("audio").join(format!("{}.wav", p.id)))?;
            if sr != corpus.spec.sample_rate {
                return Err(Error::validation("corpus", format!("{} has sample rate {sr}", p.id)));
            }
            p.audio = audio;
        }
        Ok(corpus)
    }
}
