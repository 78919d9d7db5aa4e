//! Paired acoustic metrics, FAD extrapolation and real-time factor.

pub mod fad;
pub mod spectral;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};
use spectral::{apply_filterbank, mel_filterbank, Stft};

pub const MEL_BANDS: usize = 64;
pub const MEL_FFT: usize = 1024;
pub const MEL_HOP: usize = 256;
pub const LOG_FLOOR: f64 = 1e-5;
pub const RMS_FLOOR_DB: f64 = -80.0;
pub const LOW_EDGE_HZ: f64 = 150.0;
pub const HIGH_EDGE_HZ: f64 = 2000.0;
pub const MRSTFT_SIZES: [usize; 3] = [256, 512, 1024];

/// A generated clip and its matched reference over the same frame mask.
#[derive(Debug, Clone, Copy)]
pub struct ClipPair<'a> {
    pub generated: &'a [f32],
    pub reference: &'a [f32],
    pub frame_mask: &'a [bool],
    pub sample_rate: u32,
    pub hop: usize,
}

impl<'a> ClipPair<'a> {
    /// Sample span covered by the valid frames.
    pub fn region(&self) -> Result<std::ops::Range<usize>> {
        if self.generated.len() != self.reference.len() {
            return Err(Error::Shape(format!(
                "generated clip has {} samples, reference {}",
                self.generated.len(),
                self.reference.len()
            )));
        }
        let first = self.frame_mask.iter().position(|&m| m).ok_or(Error::EmptyMask)?;
        let last = self.frame_mask.iter().rposition(|&m| m).ok_or(Error::EmptyMask)?;
        let len = self.generated.len();
        Ok((first * self.hop).min(len)..((last + 1) * self.hop).min(len))
    }

    fn masked(&self) -> Result<(&'a [f32], &'a [f32])> {
        let r = self.region()?;
        Ok((&self.generated[r.clone()], &self.reference[r]))
    }
}

/// Per-clip values of the paired metric suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipMetrics {
    pub mel_mae_db: f64,
    pub flux_cos: f64,
    pub flux_cos_low: f64,
    pub flux_cos_mid: f64,
    pub flux_cos_high: f64,
    pub band_balance: f64,
    pub centroid_mae_hz: f64,
    pub rms_mae_db_raw: f64,
    pub rms_mae_db_peaknorm: f64,
    pub crest_mae_db: f64,
    pub mrstft_l1: f64,
    pub waveform_l1: f64,
}

impl ClipMetrics {
    pub const NAMES: [&'static str; 12] = [
        "mel_mae_db",
        "flux_cos",
        "flux_cos_low",
        "flux_cos_mid",
        "flux_cos_high",
        "band_balance",
        "centroid_mae_hz",
        "rms_mae_db_raw",
        "rms_mae_db_peaknorm",
        "crest_mae_db",
        "mrstft_l1",
        "waveform_l1",
    ];

    pub fn values(&self) -> [f64; 12] {
        [
            self.mel_mae_db,
            self.flux_cos,
            self.flux_cos_low,
            self.flux_cos_mid,
            self.flux_cos_high,
            self.band_balance,
            self.centroid_mae_hz,
            self.rms_mae_db_raw,
            self.rms_mae_db_peaknorm,
            self.crest_mae_db,
            self.mrstft_l1,
            self.waveform_l1,
        ]
    }

    pub fn higher_is_better(name: &str) -> bool {
        name.starts_with("flux_cos")
    }
}

/// Which part of the spectrum an onset-flux envelope reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FluxBand {
    Broad,
    Low,
    Mid,
    High,
}

impl FluxBand {
    fn contains(self, f: f64) -> bool {
        match self {
            FluxBand::Broad => true,
            FluxBand::Low => f < LOW_EDGE_HZ,
            FluxBand::Mid => (LOW_EDGE_HZ..HIGH_EDGE_HZ).contains(&f),
            FluxBand::High => f >= HIGH_EDGE_HZ,
        }
    }
}

/// Reusable transforms for the suite at one sample rate.
pub struct MetricSuite {
    sample_rate: u32,
    stft: Stft,
    mel_bank: Vec<Vec<f64>>,
    resolutions: Vec<Stft>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    match (na == 0.0, nb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => (a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)).clamp(0.0, 1.0),
    }
}

fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

fn rms(x: &[f32]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / x.len() as f64).sqrt()
}

fn peak(x: &[f32]) -> f64 {
    x.iter().fold(0.0f64, |m, &v| m.max((v as f64).abs()))
}

/// RMS level in dBFS, floored at -80 dB.
pub fn rms_db(x: &[f32]) -> f64 {
    (20.0 * rms(x).log10()).max(RMS_FLOOR_DB)
}

/// `20 log10(peak / rms)`; zero for silence.
pub fn crest_db(x: &[f32]) -> f64 {
    let r = rms(x);
    if r == 0.0 {
        return 0.0;
    }
    20.0 * (peak(x) / r).log10()
}

fn peak_normalized(x: &[f32]) -> Vec<f32> {
    let p = peak(x);
    if p == 0.0 {
        return x.to_vec();
    }
    x.iter().map(|&v| (v as f64 / p) as f32).collect()
}

/// Real-time factor: generation time over audio duration.
pub fn real_time_factor(generation_seconds: f64, audio_seconds: f64) -> Result<f64> {
    if !(audio_seconds > 0.0) {
        return Err(Error::validation("audio_seconds", "must be positive"));
    }
    Ok(generation_seconds / audio_seconds)
}

impl MetricSuite {
    pub fn new(sample_rate: u32) -> Self {
        Self {
            sample_rate,
            stft: Stft::new(MEL_FFT, MEL_HOP),
            mel_bank: mel_filterbank(MEL_BANDS, MEL_FFT, sample_rate),
            resolutions: MRSTFT_SIZES.iter().map(|&n| Stft::new(n, n / 4)).collect(),
        }
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Log-mel frames in dB, `frames x 64`.
    pub fn log_mel(&self, audio: &[f32]) -> Vec<Vec<f64>> {
        apply_filterbank(&self.stft.magnitudes(audio), &self.mel_bank)
            .into_iter()
            .map(|row| row.into_iter().map(|v| 20.0 * v.max(LOG_FLOOR).log10()).collect())
            .collect()
    }

    pub fn mel_mae(&self, pair: &ClipPair) -> Result<f64> {
        let (g, r) = pair.masked()?;
        let a: Vec<f64> = self.log_mel(g).concat();
        let b: Vec<f64> = self.log_mel(r).concat();
        Ok(mean_abs_diff(&a, &b))
    }

    /// Half-wave-rectified spectral flux per frame, restricted to `band`.
    pub fn flux_envelope(&self, audio: &[f32], band: FluxBand) -> Vec<f64> {
        self.flux_from(&self.stft.magnitudes(audio), band)
    }

    fn flux_from(&self, mags: &[Vec<f64>], band: FluxBand) -> Vec<f64> {
        let bins: Vec<usize> = (0..self.stft.bins())
            .filter(|&k| band.contains(self.stft.bin_frequency(k, self.sample_rate)))
            .collect();
        let mut out = Vec::with_capacity(mags.len());
        for t in 0..mags.len() {
            let v = if t == 0 {
                bins.iter().map(|&k| mags[0][k]).sum()
            } else {
                bins.iter().map(|&k| (mags[t][k] - mags[t - 1][k]).max(0.0)).sum()
            };
            out.push(v);
        }
        out
    }

    pub fn onset_flux_cosine(&self, pair: &ClipPair, band: FluxBand) -> Result<f64> {
        let (g, r) = pair.masked()?;
        Ok(cosine(&self.flux_envelope(g, band), &self.flux_envelope(r, band)))
    }

    fn band_ratios(&self, mags: &[Vec<f64>]) -> [f64; 3] {
        let mut e = [0.0; 3];
        for frame in mags {
            for (k, m) in frame.iter().enumerate() {
                let f = self.stft.bin_frequency(k, self.sample_rate);
                let b = if f < LOW_EDGE_HZ {
                    0
                } else if f < HIGH_EDGE_HZ {
                    1
                } else {
                    2
                };
                e[b] += m * m;
            }
        }
        let total: f64 = e.iter().sum();
        if total == 0.0 {
            return [0.0; 3];
        }
        e.map(|v| v / total)
    }

    /// Mean of the magnitude-weighted centroid over frames whose peak bin
    /// reaches `LOG_FLOOR`.
    fn mean_centroid(&self, mags: &[Vec<f64>]) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for frame in mags {
            let total: f64 = frame.iter().sum();
            if frame.iter().any(|&m| m >= LOG_FLOOR) {
                let c: f64 = frame
                    .iter()
                    .enumerate()
                    .map(|(k, m)| m * self.stft.bin_frequency(k, self.sample_rate))
                    .sum();
                sum += c / total;
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    fn mrstft(&self, g: &[f32], r: &[f32]) -> f64 {
        let per: Vec<f64> = self
            .resolutions
            .iter()
            .map(|stft| {
                let log = |x: &[f32]| -> Vec<f64> {
                    stft.magnitudes(x).concat().into_iter().map(|v| v.max(LOG_FLOOR).ln()).collect()
                };
                mean_abs_diff(&log(g), &log(r))
            })
            .collect();
        per.iter().sum::<f64>() / per.len() as f64
    }

    pub fn evaluate(&self, pair: &ClipPair) -> Result<ClipMetrics> {
        let (g, r) = pair.masked()?;
        let mg = self.stft.magnitudes(g);
        let mr = self.stft.magnitudes(r);
        let bg = self.band_ratios(&mg);
        let br = self.band_ratios(&mr);
        let flux = |band| cosine(&self.flux_from(&mg, band), &self.flux_from(&mr, band));
        let waveform_l1 = if g.is_empty() {
            0.0
        } else {
            g.iter().zip(r).map(|(a, b)| ((*a as f64) - (*b as f64)).abs()).sum::<f64>() / g.len() as f64
        };
        let mel = |m: &[Vec<f64>]| -> Vec<f64> {
            apply_filterbank(m, &self.mel_bank)
                .concat()
                .into_iter()
                .map(|v| 20.0 * v.max(LOG_FLOOR).log10())
                .collect()
        };
        Ok(ClipMetrics {
            mel_mae_db: mean_abs_diff(&mel(&mg), &mel(&mr)),
            flux_cos: flux(FluxBand::Broad),
            flux_cos_low: flux(FluxBand::Low),
            flux_cos_mid: flux(FluxBand::Mid),
            flux_cos_high: flux(FluxBand::High),
            band_balance: bg.iter().zip(&br).map(|(a, b)| (a - b).abs()).sum(),
            centroid_mae_hz: (self.mean_centroid(&mg) - self.mean_centroid(&mr)).abs(),
            rms_mae_db_raw: (rms_db(g) - rms_db(r)).abs(),
            rms_mae_db_peaknorm: (rms_db(&peak_normalized(g)) - rms_db(&peak_normalized(r))).abs(),
            crest_mae_db: (crest_db(g) - crest_db(r)).abs(),
            mrstft_l1: self.mrstft(g, r),
            waveform_l1,
        })
    }
}

/// Aggregated test-set row for one system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub system: String,
    pub system_type: String,
    pub clips: usize,
    pub fad_inf: f64,
    pub fad_r2: f64,
    /// Means of [`ClipMetrics::NAMES`] in that order.
    pub means: Vec<f64>,
    /// Generation time over audio duration, absent for non-generative rows.
    pub rtf: Option<f64>,
}

/// Column means over clips in the given order.
pub fn mean_metrics(clips: &[ClipMetrics]) -> Result<Vec<f64>> {
    if clips.is_empty() {
        return Err(Error::Degenerate("no clips to aggregate".into()));
    }
    let mut sums = [0.0; 12];
    for c in clips {
        for (s, v) in sums.iter_mut().zip(c.values()) {
            *s += v;
        }
    }
    Ok(sums.iter().map(|s| s / clips.len() as f64).collect())
}
