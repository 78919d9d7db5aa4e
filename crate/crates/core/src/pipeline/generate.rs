//! The one generation path shared by batch evaluation and the service.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::train::{Checkpoint, Network};
use crate::baselines::decode_trajectory;
use crate::codec::Codec;
use crate::frames::Frames;
use crate::grid::{DrumGrid, SegmentWindow};
use crate::pca::PcaBasis;
use crate::timing::FrameLayout;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub audio: Vec<f32>,
    /// Standardized PCA trajectory; absent for silent renders.
    pub x0: Option<Frames>,
    pub seconds: f64,
}

impl Generated {
    pub fn audio_seconds(&self, sample_rate: u32) -> f64 {
        self.audio.len() as f64 / sample_rate as f64
    }
}

/// Per-clip sampling seed for batch evaluation.
pub fn clip_seed(base: u64, key: &str) -> u64 {
    let digest = Sha256::new().chain_update(base.to_le_bytes()).chain_update(key.as_bytes()).finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// The first four beats of a metronomic grid starting at time zero.
pub fn request_window(bpm: f64, layout: &FrameLayout) -> Result<SegmentWindow> {
    let period = 60.0 / bpm;
    SegmentWindow::new("request", 0, (0..5).map(|i| i as f64 * period).collect(), layout)
}

/// Render `window` of `grid` with a trained model.
///
/// A window without onsets renders as silence. Diffusion sampling draws all
/// noise from `seed`; the regressor ignores it. Unguided, one sample.
pub fn generate(
    checkpoint: &Checkpoint,
    codec: &Codec,
    basis: &PcaBasis,
    grid: &DrumGrid,
    window: &SegmentWindow,
    seed: u64,
) -> Result<Generated> {
    let start = Instant::now();
    let layout = codec.layout();
    let samples = layout.span_samples(window.start, window.end);
    if grid.onset_cells(window.start, window.end).next().is_none() {
        return Ok(Generated {
            audio: vec![0.0; samples],
            x0: None,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    let frame_rate = layout.frame_rate();
    let cond = checkpoint.frontend.build(grid, window, frame_rate)?.h;
    let x0 = match &checkpoint.network {
        Network::Diffusion(d) => {
            let schedule = checkpoint.schedule()?.expect("diffusion checkpoints carry a step count");
            d.sample(&cond, &window.frame_mask, frame_rate, &schedule, &mut ChaCha8Rng::seed_from_u64(seed))?
        }
        Network::Regressor(r) => r.predict(&cond, &window.frame_mask, frame_rate)?,
    };
    let audio = decode_trajectory(&x0, basis, codec, samples)?;
    Ok(Generated {
        audio,
        x0: Some(x0),
        seconds: start.elapsed().as_secs_f64(),
    })
}
