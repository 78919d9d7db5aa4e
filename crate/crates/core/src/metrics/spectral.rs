//! STFT magnitudes and the mel filterbank used by the paired metrics.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

/// Hann-windowed STFT with centred frames and zero padding of `n_fft / 2`.
pub struct Stft {
    n_fft: usize,
    hop: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(n_fft: usize, hop: usize) -> Self {
        let window = (0..n_fft)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n_fft as f64).cos())
            .collect();
        Self {
            n_fft,
            hop,
            window,
            fft: FftPlanner::new().plan_fft_forward(n_fft),
        }
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn bin_frequency(&self, bin: usize, sample_rate: u32) -> f64 {
        bin as f64 * sample_rate as f64 / self.n_fft as f64
    }

    /// `1 + len / hop` frames of `n_fft / 2 + 1` magnitudes.
    pub fn magnitudes(&self, audio: &[f32]) -> Vec<Vec<f64>> {
        let half = self.n_fft / 2;
        let frames = 1 + audio.len() / self.hop;
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        (0..frames)
            .map(|t| {
                let centre = t * self.hop;
                for (i, b) in buf.iter_mut().enumerate() {
                    let pos = centre as isize + i as isize - half as isize;
                    let x = if pos >= 0 && (pos as usize) < audio.len() {
                        audio[pos as usize] as f64
                    } else {
                        0.0
                    };
                    *b = Complex::new(x * self.window[i], 0.0);
                }
                self.fft.process(&mut buf);
                buf[..self.bins()].iter().map(|c| c.norm()).collect()
            })
            .collect()
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-mel filters from 0 Hz to Nyquist, `bands x bins`.
pub fn mel_filterbank(bands: usize, n_fft: usize, sample_rate: u32) -> Vec<Vec<f64>> {
    let bins = n_fft / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..bands + 2).map(|i| mel_to_hz(top * i as f64 / (bands + 1) as f64)).collect();
    (0..bands)
        .map(|b| {
            let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * sample_rate as f64 / n_fft as f64;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

/// Filterbank applied to magnitude frames.
pub fn apply_filterbank(frames: &[Vec<f64>], bank: &[Vec<f64>]) -> Vec<Vec<f64>> {
    frames
        .iter()
        .map(|spec| bank.iter().map(|f| f.iter().zip(spec).map(|(w, m)| w * m).sum()).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tone_peaks_at_its_bin() {
        let stft = Stft::new(1024, 256);
        let sr = 16_000;
        let f = 40.0 * sr as f64 / 1024.0;
        let audio: Vec<f32> = (0..8000).map(|i| (2.0 * PI * f * i as f64 / sr as f64).sin() as f32).collect();
        let mags = stft.magnitudes(&audio);
        assert_eq!(mags.len(), 1 + 8000 / 256);
        let mid = &mags[10];
        let peak = (0..mid.len()).max_by(|&a, &b| mid[a].total_cmp(&mid[b])).unwrap();
        assert_eq!(peak, 40);
        assert!((mid[40] - 256.0).abs() < 1.0);
    }

    #[test]
    fn filterbank_shape() {
        let bank = mel_filterbank(64, 1024, 16_000);
        assert_eq!(bank.len(), 64);
        assert!(bank.iter().all(|f| f.len() == 513 && f.iter().all(|&w| (0.0..=1.0).contains(&w))));
        assert!(bank[40].iter().any(|&w| w > 0.5));
    }
}
