//! Seconds-aligned multiscale symbolic frontend.
//!
//! For every codec frame time `tau_j` each branch reads a window of the
//! 250 Hz grid centred on `tau_j`, encodes it with a convolutional stem,
//! residual dilated convolutions and a bidirectional LSTM read out at the
//! centre, and normalizes the result to the unit sphere. The four branch
//! vectors are concatenated into one conditioning row.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::frames::Frames;
use crate::grid::{DrumGrid, SegmentWindow, FAMILIES, GRID_RATE, NUMERIC_LANES, ONSET_VELOCITY, STATE};
use crate::nn::{l2_normalize, tensor_from, tensor_to_vec, Conv1d, LayerNorm, Linear, LstmCell, ParamStore};
use crate::timing::frame_center_times;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontendConfig {
    /// Window half-widths in grid steps.
    pub radii: Vec<usize>,
    pub branch_dim: usize,
    pub grid_rate: f64,
    pub stem_channels: usize,
    pub dilations: Vec<usize>,
    pub lstm_hidden: usize,
    /// One-hot width per family.
    pub articulations: usize,
    pub seed: u64,
    /// Train jointly with the sequence model.
    pub trainable: bool,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            radii: vec![0, 22, 41, 55],
            branch_dim: 64,
            grid_rate: GRID_RATE,
            stem_channels: 32,
            dilations: vec![1, 2],
            lstm_hidden: 32,
            articulations: 4,
            seed: 99,
            trainable: true,
        }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.radii.first() != Some(&0) || self.radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::validation("frontend.radii", "must ascend strictly from 0"));
        }
        if self.branch_dim == 0 || self.stem_channels == 0 || self.lstm_hidden == 0 {
            return Err(Error::validation("frontend", "widths must be positive"));
        }
        if self.grid_rate != GRID_RATE {
            return Err(Error::validation("frontend.grid_rate", "grids are built at 250 Hz"));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        NUMERIC_LANES + FAMILIES * self.articulations
    }

    pub fn cond_dim(&self) -> usize {
        self.branch_dim * self.radii.len()
    }

    pub fn max_radius(&self) -> usize {
        *self.radii.last().unwrap_or(&0)
    }
}

/// `h`: one conditioning row per codec frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningSequence {
    pub h: Frames,
    pub frame_times: Vec<f64>,
}

/// `T` frame-centre times of a clip starting at `start`.
pub fn codec_frame_times(frames: usize, frame_rate: f64, start: f64) -> Vec<f64> {
    frame_center_times(frames, frame_rate, start)
}

fn is_velocity_lane(lane: usize) -> bool {
    (STATE..STATE + FAMILIES).contains(&lane) || (ONSET_VELOCITY..ONSET_VELOCITY + FAMILIES).contains(&lane)
}

/// Channel-major `(channels, 2 * radius + 1)` window centred on `tau`.
///
/// Velocity lanes are linearly interpolated; counts and articulation one-hots
/// take the nearest cell. Positions outside the grid are zero.
pub fn sample_window(grid: &DrumGrid, tau: f64, radius: usize, articulations: usize) -> Vec<f64> {
    let width = 2 * radius + 1;
    let channels = NUMERIC_LANES + FAMILIES * articulations;
    let mut out = vec![0.0; channels * width];
    fill_window(grid, tau, radius, articulations, &mut out);
    out
}

fn fill_window(grid: &DrumGrid, tau: f64, radius: usize, articulations: usize, out: &mut [f64]) {
    let width = 2 * radius + 1;
    let last = grid.len() as f64 - 1.0;
    let centre = grid.position(tau);
    for i in 0..width {
        let pos = centre + i as f64 - radius as f64;
        if !(pos >= 0.0 && pos <= last) {
            continue;
        }
        let lo = pos.floor() as usize;
        let frac = pos - lo as f64;
        let nearest = (pos + 0.5).floor().min(last) as usize;
        for lane in 0..NUMERIC_LANES {
            let values = grid.lane(lane);
            out[lane * width + i] = if is_velocity_lane(lane) {
                let a = values[lo] as f64;
                if frac > 0.0 {
                    (1.0 - frac) * a + frac * values[lo + 1] as f64
                } else {
                    a
                }
            } else {
                values[nearest] as f64
            };
        }
        for f in 0..FAMILIES {
            let id = grid.articulation_lane(f)[nearest] as usize;
            if id < articulations {
                out[(NUMERIC_LANES + f * articulations + id) * width + i] = 1.0;
            }
        }
    }
}

struct Branch {
    radius: usize,
    stem: Conv1d,
    blocks: Vec<Conv1d>,
    forward_lstm: LstmCell,
    backward_lstm: LstmCell,
    project: Linear,
    norm: LayerNorm,
}

impl Branch {
    /// `windows (T, C, 2r+1)` to `(T, branch_dim)` unit rows.
    fn forward(&self, windows: &Tensor) -> Result<Tensor> {
        let mut x = self.stem.forward(windows)?.relu()?;
        for block in &self.blocks {
            x = (&x + block.forward(&x)?.relu()?)?;
        }
        let at = |p: usize| -> Result<Tensor> { Ok(x.narrow(2, p, 1)?.squeeze(2)?) };
        let r = self.radius;
        let fwd: Vec<Tensor> = (0..=r).map(at).collect::<Result<_>>()?;
        let bwd: Vec<Tensor> = (r..=2 * r).rev().map(at).collect::<Result<_>>()?;
        let state = Tensor::cat(&[self.forward_lstm.run(&fwd)?, self.backward_lstm.run(&bwd)?], 1)?;
        l2_normalize(&self.norm.forward(&self.project.forward(&state)?)?)
    }
}

pub struct Frontend {
    config: FrontendConfig,
    store: ParamStore,
    branches: Vec<Branch>,
}

impl Frontend {
    pub fn new(config: FrontendConfig, dtype: DType) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(config.seed, dtype);
        let c = config.stem_channels;
        let hidden = config.lstm_hidden;
        let mut branches = Vec::with_capacity(config.radii.len());
        for (b, &radius) in config.radii.iter().enumerate() {
            let p = format!("branch{b}");
            let stem = Conv1d::new(&mut store, &format!("{p}.stem"), config.channels(), c, 3, 1)?;
            let blocks = config
                .dilations
                .iter()
                .enumerate()
                .map(|(i, &d)| Conv1d::new(&mut store, &format!("{p}.block{i}"), c, c, 3, d))
                .collect::<Result<_>>()?;
            branches.push(Branch {
                radius,
                stem,
                blocks,
                forward_lstm: LstmCell::new(&mut store, &format!("{p}.lstm_fwd"), c, hidden)?,
                backward_lstm: LstmCell::new(&mut store, &format!("{p}.lstm_bwd"), c, hidden)?,
                project: Linear::new(&mut store, &format!("{p}.project"), 2 * hidden, config.branch_dim)?,
                norm: LayerNorm::new(&mut store, &format!("{p}.norm"), config.branch_dim)?,
            });
        }
        Ok(Self { config, store, branches })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    /// Branch inputs for all frame times, one `(T, C, 2r+1)` tensor per radius.
    pub fn window_tensors(&self, grid: &DrumGrid, times: &[f64]) -> Result<Vec<Tensor>> {
        let channels = self.config.channels();
        self.config
            .radii
            .iter()
            .map(|&r| {
                let width = 2 * r + 1;
                let block = channels * width;
                let mut data = vec![0.0; times.len() * block];
                for (j, &tau) in times.iter().enumerate() {
                    fill_window(grid, tau, r, self.config.articulations, &mut data[j * block..(j + 1) * block]);
                }
                tensor_from(data, &[times.len(), channels, width], self.store.dtype())
            })
            .collect()
    }

    /// `(T, cond_dim)` conditioning for prepared window tensors.
    pub fn encode(&self, windows: &[Tensor]) -> Result<Tensor> {
        if windows.len() != self.branches.len() {
            return Err(Error::Shape(format!("{} window sets for {} branches", windows.len(), self.branches.len())));
        }
        let parts = self
            .branches
            .iter()
            .zip(windows)
            .map(|(b, w)| b.forward(w))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::cat(&parts, 1)?)
    }

    pub fn encode_times(&self, grid: &DrumGrid, times: &[f64]) -> Result<Tensor> {
        if times.is_empty() {
            return Err(Error::Shape("no frame times".into()));
        }
        self.encode(&self.window_tensors(grid, times)?)
    }

    /// Conditioning rows for every codec frame of `window`.
    pub fn build(&self, grid: &DrumGrid, window: &SegmentWindow, frame_rate: f64) -> Result<ConditioningSequence> {
        let times = codec_frame_times(window.frames(), frame_rate, window.start);
        let h = self.encode_times(grid, &times)?;
        Ok(ConditioningSequence {
            h: Frames::from_vec(self.config.cond_dim(), tensor_to_vec(&h)?),
            frame_times: times,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, DrumEvent};
    use crate::nn::scalar;
    use crate::timing::FrameLayout;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> FrontendConfig {
        FrontendConfig {
            radii: vec![0, 2, 3],
            branch_dim: 6,
            stem_channels: 4,
            lstm_hidden: 3,
            ..FrontendConfig::default()
        }
    }

    fn events() -> Vec<DrumEvent> {
        (0..12)
            .map(|i| DrumEvent {
                family: (i * 3) % 8,
                time: 0.13 * i as f64 + 0.01,
                velocity: 0.3 + 0.05 * i as f64,
                articulation: i % 4,
            })
            .collect()
    }

    #[test]
    fn frame_time_convention() {
        assert_eq!(codec_frame_times(1, 100.0, 0.0), vec![0.005]);
        let t = codec_frame_times(5, 62.5, 1.0);
        for w in t.windows(2) {
            assert!((w[1] - w[0] - 0.016).abs() < 1e-12);
        }
        let shifted = codec_frame_times(5, 62.5, 1.5);
        for (a, b) in t.iter().zip(&shifted) {
            assert!((b - a - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn radius_zero_is_one_column() {
        let g = build_grid(&events(), 120.0, 2.0).unwrap();
        let w = sample_window(&g, 0.5, 0, 4);
        assert_eq!(w.len(), NUMERIC_LANES + 32);
    }

    #[test]
    fn constant_lane_is_constant() {
        // A single early hit holds its state velocity to the end of the grid.
        let e = DrumEvent {
            family: 2,
            time: 0.0,
            velocity: 0.7,
            articulation: 1,
        };
        let g = build_grid(&[e], 120.0, 2.0).unwrap();
        let r = 22;
        let w = sample_window(&g, 1.0, r, 4);
        let width = 2 * r + 1;
        let lane = STATE + 2;
        assert!(w[lane * width..(lane + 1) * width].iter().all(|&v| (v - 0.7f32 as f64).abs() < 1e-7));
        let onehot = NUMERIC_LANES + 2 * 4 + 1;
        assert!(w[onehot * width..(onehot + 1) * width].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn beyond_grid_end_is_zero() {
        let g = build_grid(&events(), 120.0, 2.0).unwrap();
        let r = 22;
        let w = sample_window(&g, 1.99, r, 4);
        let width = 2 * r + 1;
        let cut = (g.len() as f64 - 1.0 - g.position(1.99) + r as f64).floor() as usize + 1;
        for c in 0..NUMERIC_LANES + 32 {
            assert!(w[c * width + cut..(c + 1) * width].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn branch_blocks_are_unit_norm() {
        let f = Frontend::new(FrontendConfig::default(), DType::F32).unwrap();
        let g = build_grid(&events(), 120.0, 2.0).unwrap();
        let layout = FrameLayout { sample_rate: 16_000, hop: 256 };
        let win = SegmentWindow::new("s", 0, vec![0.0, 0.5, 1.0, 1.5, 2.0], &layout).unwrap();
        let c = f.build(&g, &win, layout.frame_rate()).unwrap();
        assert_eq!(c.h.dim(), 256);
        assert_eq!(c.h.rows(), win.frames());
        for row in c.h.iter_rows() {
            for block in row.chunks(64) {
                let n: f64 = block.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() <= 1e-4);
            }
            let n: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 2.0).abs() <= 1e-3);
        }
        let again = f.build(&g, &win, layout.frame_rate()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn silent_grid_rows_are_identical() {
        let f = Frontend::new(small_config(), DType::F64).unwrap();
        let g = build_grid(&[], 120.0, 2.0).unwrap();
        let h = f.encode_times(&g, &[0.5, 0.9, 1.3]).unwrap().to_vec2::<f64>().unwrap();
        assert_eq!(h[0], h[1]);
        assert_eq!(h[1], h[2]);
    }

    #[test]
    fn distant_cells_do_not_affect_row() {
        let f = Frontend::new(FrontendConfig::default(), DType::F64).unwrap();
        let base = events();
        let tau = 0.6;
        let mut far = base.clone();
        // 57 cells after tau plus a margin: outside every window and its interpolation support.
        far.push(DrumEvent {
            family: 0,
            time: tau + 58.0 / GRID_RATE,
            velocity: 1.0,
            articulation: 3,
        });
        let a = build_grid(&base, 120.0, 2.0).unwrap();
        let b = build_grid(&far, 120.0, 2.0).unwrap();
        let ha = tensor_to_vec(&f.encode_times(&a, &[tau]).unwrap()).unwrap();
        let hb = tensor_to_vec(&f.encode_times(&b, &[tau]).unwrap()).unwrap();
        assert_eq!(ha, hb);
    }

    fn shifted(events: &[DrumEvent], dt: f64) -> Vec<DrumEvent> {
        events.iter().map(|e| DrumEvent { time: e.time + dt, ..*e }).collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn sampling_is_shift_equivariant(cells in 1usize..60, cell in 125usize..300, frac in 0.05f64..0.45) {
            let dt = cells as f64 / GRID_RATE;
            let tau = (cell as f64 + frac) / GRID_RATE;
            let a = build_grid(&events(), 120.0, 2.0).unwrap();
            let b = build_grid(&shifted(&events(), dt), 120.0, 2.0 + dt).unwrap();
            let wa = sample_window(&a, tau, 22, 4);
            let wb = sample_window(&b, tau + dt, 22, 4);
            for (x, y) in wa.iter().zip(&wb) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let f = Frontend::new(small_config(), DType::F64).unwrap();
        let g = build_grid(&events(), 120.0, 2.0).unwrap();
        let windows = f.window_tensors(&g, &[0.3, 0.62, 0.9]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let weights: Vec<f64> = (0..3 * 18).map(|_| rng.random_range(-1.0..1.0)).collect();
        let weights = tensor_from(weights, &[3, 18], DType::F64).unwrap();
        let loss = |f: &Frontend| f.encode(&windows).unwrap().mul(&weights).unwrap().sum_all().unwrap();
        let grads = loss(&f).backward().unwrap();
        let mut checked = 0;
        for (name, var) in f.params().named() {
            let grad = tensor_to_vec(grads.get(var.as_tensor()).unwrap()).unwrap();
            let base = tensor_to_vec(var.as_tensor()).unwrap();
            for idx in [0, base.len() / 2, base.len() - 1] {
                let h = 1e-6;
                let mut plus = base.clone();
                plus[idx] += h;
                var.set(&tensor_from(plus, var.dims(), DType::F64).unwrap()).unwrap();
                let lp = scalar(&loss(&f)).unwrap();
                let mut minus = base.clone();
                minus[idx] -= h;
                var.set(&tensor_from(minus, var.dims(), DType::F64).unwrap()).unwrap();
                let lm = scalar(&loss(&f)).unwrap();
                var.set(&tensor_from(base.clone(), var.dims(), DType::F64).unwrap()).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let rel = (fd - grad[idx]).abs() / fd.abs().max(grad[idx].abs()).max(1e-6);
                assert!(rel < 1e-3, "{name}[{idx}]: fd {fd} vs {}", grad[idx]);
                checked += 1;
            }
        }
        assert!(checked > 30);
    }
}
