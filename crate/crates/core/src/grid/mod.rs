//! Symbolic drum grids on a 250 Hz seconds grid.
//!
//! A grid carries 24 numeric lanes (state velocity, onset velocity and onset
//! count for each of eight drum families) plus one articulation-ID lane per
//! family. Lanes are grouped by kind: `[state x8 | onset velocity x8 | onset count x8]`.

mod features;
mod onset;
mod render;
mod window;

pub use features::{nn_feature_vector, FEATURE_LEN, BPM_SCALE, STEPS_PER_WINDOW};
pub use onset::{boundary_onset_filter, onset_envelope, OnsetEnvelope, BOUNDARY_WINDOW};
pub use render::{render_procedural, render_span, FamilyVoice, Timbre};
pub use window::{metronome_beats, segment_windows, SegmentWindow};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const GRID_RATE: f64 = 250.0;
pub const FAMILIES: usize = 8;
pub const NUMERIC_LANES: usize = 3 * FAMILIES;
pub const DEFAULT_ARTICULATIONS: usize = 4;

pub const FAMILY_NAMES: [&str; FAMILIES] = [
    "kick",
    "snare",
    "closed_hat",
    "open_hat",
    "low_tom",
    "high_tom",
    "crash",
    "ride",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrumEvent {
    pub family: usize,
    pub time: f64,
    pub velocity: f64,
    #[serde(default)]
    pub articulation: usize,
}

/// The JSON document exchanged with the UI and stored in corpus files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDocument {
    pub bpm: f64,
    /// Seconds. Defaults to four beats at `bpm`.
    #[serde(default)]
    pub duration: Option<f64>,
    #[serde(default)]
    pub articulation_vocab: Option<[usize; FAMILIES]>,
    #[serde(default)]
    pub events: Vec<DrumEvent>,
}

impl GridDocument {
    pub fn duration(&self) -> f64 {
        self.duration.unwrap_or(4.0 * 60.0 / self.bpm)
    }

    pub fn vocab(&self) -> [usize; FAMILIES] {
        self.articulation_vocab.unwrap_or([DEFAULT_ARTICULATIONS; FAMILIES])
    }

    pub fn to_grid(&self) -> Result<DrumGrid> {
        build_grid_with_vocab(&self.events, self.bpm, self.duration(), self.vocab())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrumGrid {
    /// Time of cell 0 in seconds.
    origin: f64,
    bpm: f64,
    vocab: [usize; FAMILIES],
    len: usize,
    /// Lane-major, `lane * len + cell`.
    numeric: Vec<f32>,
    /// Family-major, `family * len + cell`.
    articulation: Vec<u8>,
}

pub const STATE: usize = 0;
pub const ONSET_VELOCITY: usize = FAMILIES;
pub const ONSET_COUNT: usize = 2 * FAMILIES;

pub fn build_grid(events: &[DrumEvent], bpm: f64, duration: f64) -> Result<DrumGrid> {
    build_grid_with_vocab(events, bpm, duration, [DEFAULT_ARTICULATIONS; FAMILIES])
}

pub fn build_grid_with_vocab(
    events: &[DrumEvent],
    bpm: f64,
    duration: f64,
    vocab: [usize; FAMILIES],
) -> Result<DrumGrid> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::validation("duration", format!("must be > 0, got {duration}")));
    }
    if !(bpm.is_finite() && bpm > 0.0) {
        return Err(Error::validation("bpm", format!("must be > 0, got {bpm}")));
    }
    for (f, &a) in vocab.iter().enumerate() {
        if a == 0 || a > u8::MAX as usize {
            return Err(Error::validation(
                format!("articulation_vocab[{f}]"),
                format!("size must be in 1..=255, got {a}"),
            ));
        }
    }
    for (i, e) in events.iter().enumerate() {
        if e.family >= FAMILIES {
            return Err(Error::validation(
                format!("events[{i}].family"),
                format!("must be < {FAMILIES}, got {}", e.family),
            ));
        }
        if e.articulation >= vocab[e.family] {
            return Err(Error::validation(
                format!("events[{i}].articulation"),
                format!("must be < {}, got {}", vocab[e.family], e.articulation),
            ));
        }
        if !(0.0..=1.0).contains(&e.velocity) {
            return Err(Error::validation(
                format!("events[{i}].velocity"),
                format!("must be in [0, 1], got {}", e.velocity),
            ));
        }
        if !(e.time.is_finite() && e.time >= 0.0 && e.time <= duration) {
            return Err(Error::validation(
                format!("events[{i}].time"),
                format!("must be in [0, {duration}], got {}", e.time),
            ));
        }
    }

    let len = ((duration * GRID_RATE).round() as usize).max(1);
    let mut grid = DrumGrid {
        origin: 0.0,
        bpm,
        vocab,
        len,
        numeric: vec![0.0; NUMERIC_LANES * len],
        articulation: vec![0; FAMILIES * len],
    };

    // Loudest event per (family, cell) decides the articulation; ties go to
    // the lower articulation ID.
    let mut loudest: Vec<Option<(f64, usize)>> = vec![None; FAMILIES * len];
    for e in events {
        let cell = ((e.time * GRID_RATE).round() as usize).min(len - 1);
        let count = grid.lane_mut(ONSET_COUNT + e.family);
        count[cell] += 1.0;
        let vel = grid.lane_mut(ONSET_VELOCITY + e.family);
        vel[cell] = vel[cell].max(e.velocity as f32);
        let slot = &mut loudest[e.family * len + cell];
        *slot = match *slot {
            Some((v, a)) if v > e.velocity || (v == e.velocity && a <= e.articulation) => {
                Some((v, a))
            }
            _ => Some((e.velocity, e.articulation)),
        };
    }

    for f in 0..FAMILIES {
        let mut held_velocity = 0.0f32;
        let mut held_articulation = 0u8;
        for cell in 0..len {
            if let Some((_, a)) = loudest[f * len + cell] {
                held_velocity = grid.lane(ONSET_VELOCITY + f)[cell];
                held_articulation = a as u8;
            }
            grid.lane_mut(STATE + f)[cell] = held_velocity;
            grid.articulation[f * len + cell] = held_articulation;
        }
    }
    Ok(grid)
}

impl DrumGrid {
    /// Assemble a grid from raw lanes, e.g. when reading a cache.
    pub fn from_lanes(
        origin: f64,
        bpm: f64,
        vocab: [usize; FAMILIES],
        numeric: Vec<f32>,
        articulation: Vec<u8>,
    ) -> Result<Self> {
        let len = articulation.len() / FAMILIES;
        if len == 0 || numeric.len() != NUMERIC_LANES * len || articulation.len() != FAMILIES * len {
            return Err(Error::Shape(format!(
                "grid lanes: numeric {} / articulation {}",
                numeric.len(),
                articulation.len()
            )));
        }
        for f in 0..FAMILIES {
            if articulation[f * len..(f + 1) * len]
                .iter()
                .any(|&a| a as usize >= vocab[f])
            {
                return Err(Error::validation("articulation", "ID outside vocabulary"));
            }
        }
        Ok(Self {
            origin,
            bpm,
            vocab,
            len,
            numeric,
            articulation,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn bpm(&self) -> f64 {
        self.bpm
    }

    pub fn vocab(&self) -> [usize; FAMILIES] {
        self.vocab
    }

    pub fn end_time(&self) -> f64 {
        self.origin + self.len as f64 / GRID_RATE
    }

    pub fn cell_time(&self, cell: usize) -> f64 {
        self.origin + cell as f64 / GRID_RATE
    }

    /// Fractional cell position of an absolute time.
    pub fn position(&self, time: f64) -> f64 {
        (time - self.origin) * GRID_RATE
    }

    pub fn lane(&self, lane: usize) -> &[f32] {
        &self.numeric[lane * self.len..(lane + 1) * self.len]
    }

    fn lane_mut(&mut self, lane: usize) -> &mut [f32] {
        &mut self.numeric[lane * self.len..(lane + 1) * self.len]
    }

    pub fn articulation_lane(&self, family: usize) -> &[u8] {
        &self.articulation[family * self.len..(family + 1) * self.len]
    }

    pub fn numeric(&self) -> &[f32] {
        &self.numeric
    }

    pub fn articulations(&self) -> &[u8] {
        &self.articulation
    }

    pub fn onset_count(&self, family: usize, cell: usize) -> f32 {
        self.lane(ONSET_COUNT + family)[cell]
    }

    pub fn onset_velocity(&self, family: usize, cell: usize) -> f32 {
        self.lane(ONSET_VELOCITY + family)[cell]
    }

    pub fn state_velocity(&self, family: usize, cell: usize) -> f32 {
        self.lane(STATE + family)[cell]
    }

    /// Cells whose time lies in `[start, end)`.
    pub fn cell_range(&self, start: f64, end: f64) -> std::ops::Range<usize> {
        let lo = self.position(start).ceil().max(0.0) as usize;
        let hi = self.position(end).ceil().max(0.0) as usize;
        lo.min(self.len)..hi.min(self.len)
    }

    pub fn has_onset(&self, cell: usize) -> bool {
        (0..FAMILIES).any(|f| self.onset_count(f, cell) > 0.0)
    }

    pub fn onset_cells(&self, start: f64, end: f64) -> impl Iterator<Item = usize> + '_ {
        self.cell_range(start, end).filter(|&c| self.has_onset(c))
    }

    /// Copy of the cells covering `[start, end)`, keeping absolute time.
    pub fn slice(&self, start: f64, end: f64) -> DrumGrid {
        let range = self.cell_range(start, end);
        let range = if range.is_empty() {
            let c = range.start.min(self.len - 1);
            c..c + 1
        } else {
            range
        };
        let len = range.len();
        let mut numeric = Vec::with_capacity(NUMERIC_LANES * len);
        for lane in 0..NUMERIC_LANES {
            numeric.extend_from_slice(&self.lane(lane)[range.clone()]);
        }
        let mut articulation = Vec::with_capacity(FAMILIES * len);
        for f in 0..FAMILIES {
            articulation.extend_from_slice(&self.articulation_lane(f)[range.clone()]);
        }
        DrumGrid {
            origin: self.cell_time(range.start),
            bpm: self.bpm,
            vocab: self.vocab,
            len,
            numeric,
            articulation,
        }
    }

    /// Onsets as events (one per occupied family cell), in time order.
    pub fn events(&self) -> Vec<DrumEvent> {
        let mut out = Vec::new();
        for cell in 0..self.len {
            for f in 0..FAMILIES {
                let count = self.onset_count(f, cell) as usize;
                for _ in 0..count {
                    out.push(DrumEvent {
                        family: f,
                        time: self.cell_time(cell),
                        velocity: self.onset_velocity(f, cell) as f64,
                        articulation: self.articulation_lane(f)[cell] as usize,
                    });
                }
            }
        }
        out
    }
}
