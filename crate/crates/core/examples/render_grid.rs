//! Render a hand-written grid with the procedural baseline and a briefly
//! trained diffusion model, and draw its conditioning heatmap.
//!
//!     cargo run --example render_grid [out_dir]

use std::path::PathBuf;

use drumdiff::grid::GridDocument;
use drumdiff::pipeline::generate::request_window;
use drumdiff::pipeline::wav::write_pcm16;
use drumdiff::pipeline::{build_cache, synthesize_dataset, train_on, CacheConfig, DatasetSpec, ModelKind, Preset, RunConfig, TrainingData};
use drumdiff::service::{conditioning_png, render, RenderRequest, ServiceState};

const GRID: &str = r#"{
  "bpm": 110,
  "events": [
    {"family": 0, "time": 0.0, "velocity": 1.0},
    {"family": 2, "time": 0.0, "velocity": 0.6},
    {"family": 2, "time": 0.2727, "velocity": 0.4},
    {"family": 1, "time": 0.5454, "velocity": 0.9},
    {"family": 2, "time": 0.8181, "velocity": 0.4},
    {"family": 0, "time": 1.0909, "velocity": 0.8},
    {"family": 0, "time": 1.3636, "velocity": 0.7},
    {"family": 1, "time": 1.6363, "velocity": 0.9, "articulation": 1}
  ]
}"#;

fn main() -> anyhow::Result<()> {
    env_logger::init();
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "target/example-output/render_grid".into());
    std::fs::create_dir_all(&out)?;
    let doc: GridDocument = serde_json::from_str(GRID)?;
    let grid = doc.to_grid()?;

    let corpus = synthesize_dataset(
        &DatasetSpec {
            patterns: 8,
            bars: 2,
            ..DatasetSpec::default()
        },
        2,
    )?;
    let cache = build_cache(&corpus, &CacheConfig::default())?;
    let config = RunConfig {
        preset: Preset::Tiny,
        epochs: 2,
        ..RunConfig::default()
    };
    let data = TrainingData::from_cache(&cache, &config)?;
    let ckpt = train_on(&data, &cache.basis, &cache.codec, &config, ModelKind::Diffusion { steps: 12, rvq_ce: false }, 1)?;
    let state = ServiceState::new(cache.codec.clone(), cache.basis.clone(), vec![ckpt])?;
    let sr = cache.sample_rate();

    let window = request_window(doc.bpm, &cache.codec.layout())?;
    let baseline = drumdiff::grid::render_procedural(&grid, &window, sr);
    write_pcm16(&out.join("procedural.wav"), &baseline, sr)?;
    for seed in [0, 1] {
        let req = RenderRequest {
            grid: doc.clone(),
            steps: 12,
            seed,
            rvq_ce: false,
        };
        let (audio, seconds) = render(&state, &req)?;
        write_pcm16(&out.join(format!("diffusion_seed{seed}.wav")), &audio, sr)?;
        println!("seed {seed}: {} samples in {seconds:.3}s", audio.len());
    }
    let h = state.frontend.build(&grid, &window, cache.frame_rate())?.h;
    std::fs::write(out.join("conditioning.png"), conditioning_png(&h)?)?;
    println!("conditioning {}x{}; files in {}", h.rows(), h.dim(), out.display());
    Ok(())
}
