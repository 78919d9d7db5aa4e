//! Circular sine-windowed MDCT: a critically sampled lapped orthogonal
//! transform. Frame `j` spans samples `[j*hop - hop/2, j*hop + 3*hop/2)`
//! modulo the padded clip length, so its centre sits at `(j + 0.5) * hop`.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::frames::Frames;

#[derive(Debug, Clone)]
pub struct LappedTransform {
    hop: usize,
    /// `hop x 2*hop`, rows are windowed cosine atoms.
    basis: DMatrix<f64>,
}

impl LappedTransform {
    pub fn new(hop: usize) -> Self {
        let n = hop as f64;
        let scale = (2.0 / n).sqrt();
        let basis = DMatrix::from_fn(hop, 2 * hop, |k, i| {
            let t = i as f64 + 0.5;
            let window = (PI * t / (2.0 * n)).sin();
            scale * window * (PI / n * (t + n / 2.0) * (k as f64 + 0.5)).cos()
        });
        Self { hop, basis }
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    fn frame_start(&self, j: usize, period: usize) -> usize {
        (j * self.hop + period - self.hop / 2) % period
    }

    /// Analysis of `frames` frames; the clip is zero-padded to `frames * hop`.
    pub fn analyze(&self, audio: &[f32], frames: usize) -> Frames {
        let period = frames * self.hop;
        assert!(audio.len() <= period, "clip longer than frame span");
        let width = 2 * self.hop;
        let mut segments = DMatrix::<f64>::zeros(width, frames);
        for j in 0..frames {
            let start = self.frame_start(j, period);
            for i in 0..width {
                let idx = (start + i) % period;
                segments[(i, j)] = audio.get(idx).map_or(0.0, |&x| x as f64);
            }
        }
        let coeffs = &self.basis * segments;
        let mut out = Frames::zeros(frames, self.hop);
        for j in 0..frames {
            for (k, c) in out.row_mut(j).iter_mut().enumerate() {
                *c = coeffs[(k, j)];
            }
        }
        out
    }

    /// Adjoint of [`analyze`](Self::analyze) with overlap-add, truncated to `samples`.
    pub fn synthesize(&self, latents: &Frames, samples: usize) -> Vec<f32> {
        let frames = latents.rows();
        let period = frames * self.hop;
        let coeffs = DMatrix::from_fn(self.hop, frames, |k, j| latents.row(j)[k]);
        let segments = self.basis.transpose() * coeffs;
        let mut out = vec![0.0f64; period];
        for j in 0..frames {
            let start = self.frame_start(j, period);
            for i in 0..2 * self.hop {
                out[(start + i) % period] += segments[(i, j)];
            }
        }
        out.truncate(samples.min(period));
        out.resize(samples, 0.0);
        out.into_iter().map(|x| x as f32).collect()
    }
}
