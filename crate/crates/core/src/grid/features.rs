//! Retrieval features: a flattened sixteenth-note summary of a window.
//!
//! Layout, for step `s` in `0..16`, a block of 32 values starting at `32 * s`:
//!
//! | offset   | content                                           |
//! |----------|---------------------------------------------------|
//! | `0..8`   | onset count per family (sum over the step)         |
//! | `8..16`  | onset velocity per family (max over the step)      |
//! | `16..24` | state velocity per family at the end of the step   |
//! | `24..32` | articulation ID / vocabulary size, end of the step |
//!
//! followed by one entry `bpm / BPM_SCALE` at index 512. State velocity and
//! articulation are held from onsets inside the window only, so events
//! outside the window never change the vector.

use super::{DrumGrid, SegmentWindow, FAMILIES};

pub const STEPS_PER_WINDOW: usize = 16;
const STEP_BLOCK: usize = 4 * FAMILIES;
pub const FEATURE_LEN: usize = STEPS_PER_WINDOW * STEP_BLOCK + 1;
pub const BPM_SCALE: f64 = 240.0;

pub fn nn_feature_vector(grid: &DrumGrid, window: &SegmentWindow) -> Vec<f64> {
    let mut out = vec![0.0; FEATURE_LEN];
    let vocab = grid.vocab();
    let mut held_velocity = [0.0f64; FAMILIES];
    let mut held_articulation = [0.0f64; FAMILIES];
    for step in 0..STEPS_PER_WINDOW {
        let beat = step / 4;
        let quarter = (step % 4) as f64;
        let b0 = window.beat_times[beat];
        let b1 = window.beat_times[beat + 1];
        let lo = b0 + quarter * (b1 - b0) / 4.0;
        let hi = b0 + (quarter + 1.0) * (b1 - b0) / 4.0;
        let block = &mut out[step * STEP_BLOCK..(step + 1) * STEP_BLOCK];
        for cell in grid.cell_range(lo.max(window.start), hi.min(window.end)) {
            for f in 0..FAMILIES {
                let count = grid.onset_count(f, cell) as f64;
                if count > 0.0 {
                    let vel = grid.onset_velocity(f, cell) as f64;
                    block[f] += count;
                    block[FAMILIES + f] = block[FAMILIES + f].max(vel);
                    held_velocity[f] = vel;
                    held_articulation[f] = grid.articulation_lane(f)[cell] as f64 / vocab[f] as f64;
                }
            }
        }
        block[2 * FAMILIES..3 * FAMILIES].copy_from_slice(&held_velocity);
        block[3 * FAMILIES..].copy_from_slice(&held_articulation);
    }
    out[FEATURE_LEN - 1] = grid.bpm() / BPM_SCALE;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, DrumEvent};
    use crate::timing::FrameLayout;

    fn window(start: f64) -> SegmentWindow {
        let layout = FrameLayout { sample_rate: 16_000, hop: 256 };
        let beats = (0..5).map(|i| start + i as f64 * 0.5).collect();
        SegmentWindow::new("s", 0, beats, &layout).unwrap()
    }

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn layout_length() {
        assert_eq!(FEATURE_LEN, 513);
    }

    #[test]
    fn empty_window_is_bpm_only() {
        let g = build_grid(&[], 120.0, 2.0).unwrap();
        let v = nn_feature_vector(&g, &window(0.0));
        assert!(v[..512].iter().all(|&x| x == 0.0));
        assert_eq!(v[512], 0.5);
    }

    #[test]
    fn identical_windows_have_unit_cosine() {
        let e = [DrumEvent {
            family: 1,
            time: 0.25,
            velocity: 0.6,
            articulation: 2,
        }];
        let g = build_grid(&e, 120.0, 2.0).unwrap();
        let a = nn_feature_vector(&g, &window(0.0));
        let b = nn_feature_vector(&g, &window(0.0));
        assert!((cosine(&a, &b) - 1.0).abs() < 1e-12);
        // 0.25 s is the start of step 2; snare is family 1.
        assert_eq!(a[2 * 32 + 1], 1.0);
        assert_eq!(a[2 * 32 + 8 + 1], 0.6f32 as f64);
        assert_eq!(a[5 * 32 + 16 + 1], 0.6f32 as f64);
        assert_eq!(a[5 * 32 + 24 + 1], 0.5);
    }

    #[test]
    fn outside_events_are_ignored() {
        let inside = DrumEvent {
            family: 0,
            time: 1.5,
            velocity: 0.8,
            articulation: 1,
        };
        let before = DrumEvent {
            family: 0,
            time: 0.5,
            velocity: 0.3,
            articulation: 3,
        };
        let after = DrumEvent {
            family: 4,
            time: 3.2,
            velocity: 0.3,
            articulation: 3,
        };
        let a = build_grid(&[inside], 120.0, 4.0).unwrap();
        let b = build_grid(&[before, inside, after], 120.0, 4.0).unwrap();
        assert_eq!(nn_feature_vector(&a, &window(1.0)), nn_feature_vector(&b, &window(1.0)));
    }
}
