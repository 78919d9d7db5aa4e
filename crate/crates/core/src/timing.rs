//! Sample/frame bookkeeping shared by the grid, codec and conditioning code.

use serde::{Deserialize, Serialize};

/// Codec framing: `hop` samples per frame at `sample_rate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameLayout {
    pub sample_rate: u32,
    pub hop: usize,
}

impl FrameLayout {
    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }

    /// Number of codec frames for a clip of `samples` samples.
    ///
    /// `ceil(samples / hop)`, but never fewer than two: the lapped transform
    /// needs at least two frames to be orthogonal.
    pub fn frame_count(&self, samples: usize) -> usize {
        samples.div_ceil(self.hop).max(2)
    }

    /// Sample count of a `[start, end)` span in seconds.
    pub fn span_samples(&self, start: f64, end: f64) -> usize {
        ((end - start) * self.sample_rate as f64).round().max(0.0) as usize
    }

    /// Frame-centre times for a clip beginning at `start` seconds.
    pub fn frame_times(&self, frames: usize, start: f64) -> Vec<f64> {
        frame_center_times(frames, self.frame_rate(), start)
    }

    /// Frames whose centre lies in `[start, end)`, for a clip that begins at `start`.
    pub fn frame_mask(&self, start: f64, end: f64) -> Vec<bool> {
        let frames = self.frame_count(self.span_samples(start, end));
        self.frame_times(frames, start)
            .into_iter()
            .map(|t| t >= start && t < end)
            .collect()
    }
}

/// `start + (j + 0.5) / frame_rate` for zero-based `j`.
pub fn frame_center_times(frames: usize, frame_rate: f64, start: f64) -> Vec<f64> {
    (0..frames)
        .map(|j| start + (j as f64 + 0.5) / frame_rate)
        .collect()
}
