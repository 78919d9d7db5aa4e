//! Deterministic procedural drum renderer.
//!
//! Every onset inside the span starts a new segment. Within a segment each
//! family contributes the continuation of its most recent voice, restricted
//! to that family's own frequency band by an exact DFT-bin projection over
//! the segment. Segments are disjoint in time and bands are disjoint in
//! frequency, so the contributions of distinct events are mutually
//! orthogonal: clip energy is a sum of per-event energies.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{DrumGrid, SegmentWindow, FAMILIES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyVoice {
    /// Resting pitch of the tonal part, Hz.
    pub freq: f64,
    /// Extra pitch at the onset as a multiple of `freq`, decaying with `drop_time`.
    pub pitch_drop: f64,
    pub drop_time: f64,
    /// Amplitude decay time constant, seconds.
    pub decay: f64,
    /// Noise share of the excitation in `[0, 1]`.
    pub noise: f64,
    /// Lower band edge in Hz; the band ends where the next family's starts.
    pub band_low: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timbre {
    pub voices: [FamilyVoice; FAMILIES],
    pub gain: f64,
    /// Relative decay growth per articulation ID.
    pub articulation_decay: f64,
    /// Relative pitch shift per articulation ID.
    pub articulation_pitch: f64,
    pub noise_seed: u64,
}

const fn voice(freq: f64, pitch_drop: f64, decay: f64, noise: f64, band_low: f64) -> FamilyVoice {
    FamilyVoice {
        freq,
        pitch_drop,
        drop_time: 0.03,
        decay,
        noise,
        band_low,
    }
}

impl Default for Timbre {
    fn default() -> Self {
        Self {
            voices: [
                voice(60.0, 1.0, 0.25, 0.05, 0.0),     // kick
                voice(700.0, 0.3, 0.15, 0.7, 500.0),   // snare
                voice(7000.0, 0.0, 0.04, 1.0, 5000.0), // closed hat
                voice(6000.0, 0.0, 0.35, 1.0, 3500.0), // open hat
                voice(190.0, 0.2, 0.30, 0.1, 150.0),   // low tom
                voice(330.0, 0.2, 0.25, 0.1, 280.0),   // high tom
                voice(7200.0, 0.0, 0.80, 1.0, 6500.0), // crash
                voice(2600.0, 0.0, 0.50, 0.6, 2000.0), // ride
            ],
            gain: 0.5,
            articulation_decay: 0.35,
            articulation_pitch: 0.06,
            noise_seed: 0x5eed,
        }
    }
}

impl Timbre {
    /// `[low, high)` band of each family; the top band is open-ended.
    fn bands(&self) -> [(f64, f64); FAMILIES] {
        let mut bands = [(0.0, f64::INFINITY); FAMILIES];
        for (f, band) in bands.iter_mut().enumerate() {
            let low = self.voices[f].band_low;
            let high = self
                .voices
                .iter()
                .map(|v| v.band_low)
                .filter(|&b| b > low)
                .fold(f64::INFINITY, f64::min);
            *band = (low, high);
        }
        bands
    }
}

fn hash_noise(seed: u64, family: usize, cell: usize, n: usize) -> f64 {
    let mut z = seed
        ^ (family as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (cell as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ (n as u64).wrapping_mul(0x1656_67B1_9E37_79F9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

struct Voice {
    family: usize,
    cell: usize,
    onset: usize,
    amplitude: f64,
    articulation: usize,
}

impl Voice {
    fn sample(&self, timbre: &Timbre, sr: f64, n: usize) -> f64 {
        let p = &timbre.voices[self.family];
        let art = self.articulation as f64;
        let decay = p.decay * (1.0 + timbre.articulation_decay * art);
        let freq = p.freq * (1.0 + timbre.articulation_pitch * art);
        let t = (n - self.onset) as f64 / sr;
        let env = (1.0 - (-t / 0.001).exp()) * (0.5 * (-t / 0.006).exp() + 0.5 * (-t / decay).exp());
        // Phase of a pitch that glides from freq*(1+drop) down to freq.
        let phase = 2.0 * PI * freq * (t + p.pitch_drop * p.drop_time * (1.0 - (-t / p.drop_time).exp()));
        let tone = phase.cos();
        let noise = hash_noise(timbre.noise_seed, self.family, self.cell, n - self.onset);
        self.amplitude * env * ((1.0 - p.noise) * tone + p.noise * noise)
    }
}

/// Render the window with the default kit.
pub fn render_procedural(grid: &DrumGrid, window: &SegmentWindow, sample_rate: u32) -> Vec<f32> {
    render_span(grid, window.start, window.end, sample_rate, &Timbre::default())
}

/// Render the onsets of `[start, end)`; nothing outside the span sounds.
pub fn render_span(grid: &DrumGrid, start: f64, end: f64, sample_rate: u32, timbre: &Timbre) -> Vec<f32> {
    let sr = sample_rate as f64;
    let total = ((end - start) * sr).round().max(0.0) as usize;
    let mut out = vec![0.0f64; total];

    let mut boundaries: Vec<(usize, usize)> = grid
        .onset_cells(start, end)
        .map(|cell| {
            let at = ((grid.cell_time(cell) - start) * sr).round().max(0.0) as usize;
            (at.min(total), cell)
        })
        .filter(|(at, _)| *at < total)
        .collect();
    boundaries.sort_unstable();
    if boundaries.is_empty() {
        return vec![0.0; total];
    }

    let bands = timbre.bands();
    let mut planner = FftPlanner::<f64>::new();
    let mut active: [Option<Voice>; FAMILIES] = Default::default();
    let mut buf: Vec<Complex<f64>> = Vec::new();

    let mut i = 0;
    while i < boundaries.len() {
        let seg_start = boundaries[i].0;
        // Onsets mapping to the same sample share a segment.
        while i < boundaries.len() && boundaries[i].0 == seg_start {
            let cell = boundaries[i].1;
            for (f, slot) in active.iter_mut().enumerate() {
                let count = grid.onset_count(f, cell);
                if count > 0.0 {
                    *slot = Some(Voice {
                        family: f,
                        cell,
                        onset: seg_start,
                        amplitude: grid.onset_velocity(f, cell) as f64
                            * timbre.gain
                            * (1.0 + 0.25 * (count as f64).ln()),
                        articulation: grid.articulation_lane(f)[cell] as usize,
                    });
                }
            }
            i += 1;
        }
        let seg_end = boundaries.get(i).map_or(total, |b| b.0);
        let len = seg_end - seg_start;
        if len == 0 {
            continue;
        }
        let fwd = planner.plan_fft_forward(len);
        let inv = planner.plan_fft_inverse(len);
        for v in active.iter().flatten() {
            buf.clear();
            buf.extend((seg_start..seg_end).map(|n| Complex::new(v.sample(timbre, sr, n), 0.0)));
            fwd.process(&mut buf);
            let (low, high) = bands[v.family];
            for (k, c) in buf.iter_mut().enumerate() {
                let freq = k.min(len - k) as f64 * sr / len as f64;
                if !(freq >= low && freq < high) {
                    *c = Complex::new(0.0, 0.0);
                }
            }
            inv.process(&mut buf);
            let scale = 1.0 / len as f64;
            for (o, c) in out[seg_start..seg_end].iter_mut().zip(&buf) {
                *o += c.re * scale;
            }
        }
    }
    out.into_iter().map(|x| x as f32).collect()
}
