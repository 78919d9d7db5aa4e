//! Short-time onset envelope and the window-boundary consistency filter.

use super::{DrumGrid, SegmentWindow};

/// Half-width of the boundary region checked at each window start, seconds.
pub const BOUNDARY_WINDOW: f64 = 0.060;
const ANALYSIS_WINDOW: f64 = 0.010;
const ANALYSIS_HOP: f64 = 0.005;
/// Evidence must reach this fraction of the strongest flux in the window.
const RELATIVE_EVIDENCE: f64 = 0.02;
const ABSOLUTE_EVIDENCE: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct OnsetEnvelope {
    /// Centre time of each analysis frame, seconds.
    pub times: Vec<f64>,
    /// Half-wave-rectified frame-energy difference.
    pub flux: Vec<f64>,
}

impl OnsetEnvelope {
    pub fn argmax_time(&self) -> Option<f64> {
        let (i, _) = self
            .flux
            .iter()
            .enumerate()
            .fold(None::<(usize, f64)>, |best, (i, &v)| match best {
                Some((_, b)) if b >= v => best,
                _ => Some((i, v)),
            })?;
        Some(self.times[i])
    }
}

/// Energy flux over 10 ms frames at a 5 ms hop; `offset` is the time of `audio[0]`.
pub fn onset_envelope(audio: &[f32], sample_rate: u32, offset: f64) -> OnsetEnvelope {
    let sr = sample_rate as f64;
    let win = (ANALYSIS_WINDOW * sr).round().max(1.0) as usize;
    let hop = (ANALYSIS_HOP * sr).round().max(1.0) as usize;
    let frames = audio.len().div_ceil(hop);
    let mut times = Vec::with_capacity(frames);
    let mut flux = Vec::with_capacity(frames);
    let mut previous = 0.0f64;
    for t in 0..frames {
        let lo = t * hop;
        let hi = (lo + win).min(audio.len());
        let energy: f64 = audio[lo..hi].iter().map(|&x| (x as f64) * (x as f64)).sum();
        flux.push((energy - previous).max(0.0));
        previous = energy;
        times.push(offset + (lo as f64 + win as f64 / 2.0) / sr);
    }
    OnsetEnvelope { times, flux }
}

/// Keep/drop decision for a window. `audio` is the whole source performance
/// starting at time zero.
///
/// When a symbolic onset falls within 60 ms after the window start, an audio
/// onset must also appear within 60 ms of the start; otherwise the window is kept.
pub fn boundary_onset_filter(
    window: &SegmentWindow,
    grid: &DrumGrid,
    audio: &[f32],
    sample_rate: u32,
) -> bool {
    let start = window.start;
    if grid
        .onset_cells(start, start + BOUNDARY_WINDOW)
        .next()
        .is_none()
    {
        return true;
    }
    let sr = sample_rate as f64;
    let lo_time = (start - BOUNDARY_WINDOW - 2.0 * ANALYSIS_WINDOW).max(0.0);
    let lo = ((lo_time * sr).floor() as usize).min(audio.len());
    let hi = ((window.end * sr).ceil() as usize).min(audio.len());
    if hi <= lo {
        return false;
    }
    let env = onset_envelope(&audio[lo..hi], sample_rate, lo as f64 / sr);
    // Skip the first frame when the slice does not start at the beginning of
    // the source: its flux is measured against an implicit zero.
    let first = usize::from(lo > 0);
    let peak = env
        .times
        .iter()
        .zip(&env.flux)
        .skip(first)
        .filter(|(t, _)| **t >= start - BOUNDARY_WINDOW)
        .map(|(_, f)| *f)
        .fold(0.0f64, f64::max);
    if peak <= ABSOLUTE_EVIDENCE {
        return false;
    }
    let threshold = (RELATIVE_EVIDENCE * peak).max(ABSOLUTE_EVIDENCE);
    env.times
        .iter()
        .zip(&env.flux)
        .skip(first)
        .any(|(t, f)| (t - start).abs() <= BOUNDARY_WINDOW && *f >= threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, DrumEvent};
    use crate::timing::FrameLayout;

    const SR: u32 = 16_000;

    fn window(start: f64) -> SegmentWindow {
        let layout = FrameLayout { sample_rate: SR, hop: 256 };
        let beats = (0..5).map(|i| start + i as f64 * 0.5).collect();
        SegmentWindow::new("s", 0, beats, &layout).unwrap()
    }

    fn grid_with_hit(time: f64) -> DrumGrid {
        let e = DrumEvent {
            family: 0,
            time,
            velocity: 0.9,
            articulation: 0,
        };
        build_grid(&[e], 120.0, 4.0).unwrap()
    }

    fn impulse_at(time: f64) -> Vec<f32> {
        let mut audio = vec![0.0f32; 4 * SR as usize];
        let i = (time * SR as f64) as usize;
        for k in 0..40 {
            audio[i + k] = 0.8 * (-(k as f32) / 10.0).exp();
        }
        audio
    }

    #[test]
    fn keeps_window_with_matching_audio_onset() {
        let w = window(1.0);
        assert!(boundary_onset_filter(&w, &grid_with_hit(1.0), &impulse_at(1.0), SR));
    }

    #[test]
    fn drops_window_with_silent_audio() {
        let w = window(1.0);
        let silent = vec![0.0f32; 4 * SR as usize];
        assert!(!boundary_onset_filter(&w, &grid_with_hit(1.0), &silent, SR));
    }

    #[test]
    fn late_first_hit_is_not_checked() {
        let w = window(1.0);
        let silent = vec![0.0f32; 4 * SR as usize];
        assert!(boundary_onset_filter(&w, &grid_with_hit(1.1), &silent, SR));
    }

    #[test]
    fn audio_onset_far_from_start_is_not_evidence() {
        let w = window(1.0);
        assert!(!boundary_onset_filter(&w, &grid_with_hit(1.0), &impulse_at(1.3), SR));
    }

    #[test]
    fn envelope_locates_impulse() {
        let audio = impulse_at(0.5);
        let env = onset_envelope(&audio, SR, 0.0);
        let t = env.argmax_time().unwrap();
        assert!((t - 0.5).abs() <= 0.005, "{t}");
    }
}
