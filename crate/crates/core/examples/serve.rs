//! Serve the HTTP API with quickly trained tiny checkpoints.
//!
//!     cargo run --example serve [addr]
//!     curl localhost:8080/config
//!     curl -X POST localhost:8080/render -H 'content-type: application/json' \
//!          -d '{"bpm":120,"events":[{"family":0,"time":0,"velocity":1}],"steps":6,"seed":3}' -o out.wav

use drumdiff::pipeline::{build_cache, synthesize_dataset, train_on, CacheConfig, DatasetSpec, ModelKind, Preset, RunConfig, TrainingData};
use drumdiff::service::{serve, ServiceState};

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let addr = std::env::args().nth(1).unwrap_or_else(|| "127.0.0.1:8080".into()).parse()?;
    let corpus = synthesize_dataset(
        &DatasetSpec {
            patterns: 8,
            bars: 2,
            ..DatasetSpec::default()
        },
        11,
    )?;
    let cache = build_cache(&corpus, &CacheConfig::default())?;
    let config = RunConfig {
        preset: Preset::Tiny,
        epochs: 1,
        diffusion_steps: vec![6, 12],
        ce_steps: vec![6],
        ..RunConfig::default()
    };
    let data = TrainingData::from_cache(&cache, &config)?;
    let checkpoints = ModelKind::planned(&config)
        .into_iter()
        .filter(|k| matches!(k, ModelKind::Diffusion { .. }))
        .map(|k| train_on(&data, &cache.basis, &cache.codec, &config, k, 1))
        .collect::<drumdiff::Result<Vec<_>>>()?;
    let state = ServiceState::new(cache.codec.clone(), cache.basis.clone(), checkpoints)?;
    log::info!("listening on {addr}");
    serve(state, addr).await?;
    Ok(())
}
