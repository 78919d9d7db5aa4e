use serde::{Deserialize, Serialize};

use super::DrumGrid;
use crate::timing::FrameLayout;
use crate::{Error, Result};

/// A four-beat analysis window over a source performance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentWindow {
    pub source_id: String,
    /// Position of the window within its source (beat 4*index).
    pub index: usize,
    pub start: f64,
    pub end: f64,
    /// Five ascending beat times spanning the four beats.
    pub beat_times: Vec<f64>,
    /// One flag per codec frame of the window clip: centre inside `[start, end)`.
    pub frame_mask: Vec<bool>,
}

impl SegmentWindow {
    pub fn new(
        source_id: impl Into<String>,
        index: usize,
        beat_times: Vec<f64>,
        layout: &FrameLayout,
    ) -> Result<Self> {
        if beat_times.len() != 5 {
            return Err(Error::validation("beat_times", "a window needs exactly 5 beat times"));
        }
        if beat_times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::validation("beat_times", "must be strictly increasing"));
        }
        let start = beat_times[0];
        let end = beat_times[4];
        Ok(Self {
            source_id: source_id.into(),
            index,
            start,
            end,
            frame_mask: layout.frame_mask(start, end),
            beat_times,
        })
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn frames(&self) -> usize {
        self.frame_mask.len()
    }

    pub fn valid_frames(&self) -> usize {
        self.frame_mask.iter().filter(|m| **m).count()
    }

    pub fn key(&self) -> String {
        format!("{}#{}", self.source_id, self.index)
    }
}

/// Metronomic beat times `i * 60 / bpm` covering `[0, duration]`.
pub fn metronome_beats(bpm: f64, duration: f64) -> Vec<f64> {
    let period = 60.0 / bpm;
    let count = (duration / period + 1e-9).floor() as usize + 1;
    (0..count).map(|i| i as f64 * period).collect()
}

/// Non-overlapping four-beat windows with a four-beat hop; windows without
/// any symbolic onset are dropped.
pub fn segment_windows(
    grid: &DrumGrid,
    beat_times: &[f64],
    source_id: &str,
    layout: &FrameLayout,
) -> Result<Vec<SegmentWindow>> {
    if beat_times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::validation("beat_times", "must be strictly increasing"));
    }
    if beat_times.len() < 5 {
        return Ok(Vec::new());
    }
    let count = (beat_times.len() - 1) / 4;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let beats = beat_times[4 * i..=4 * i + 4].to_vec();
        if grid.onset_cells(beats[0], beats[4]).next().is_none() {
            continue;
        }
        out.push(SegmentWindow::new(source_id, i, beats, layout)?);
    }
    Ok(out)
}
