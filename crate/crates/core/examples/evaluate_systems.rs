//! Score ceilings, baselines and briefly trained models on a held-out split
//! and print the result tables.
//!
//!     cargo run --example evaluate_systems [out_dir]

use std::path::PathBuf;

use drumdiff::pipeline::tables::results_tables;
use drumdiff::pipeline::{build_cache, evaluate, synthesize_dataset, train_on, CacheConfig, DatasetSpec, ModelKind, Preset, RunConfig, TrainingData};

fn main() -> anyhow::Result<()> {
    env_logger::init();
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "target/example-output/evaluate_systems".into());
    let corpus = synthesize_dataset(
        &DatasetSpec {
            patterns: 12,
            bars: 3,
            ..DatasetSpec::default()
        },
        9,
    )?;
    let cache = build_cache(
        &corpus,
        &CacheConfig {
            split_weights: [6.0, 1.0, 5.0],
            ..CacheConfig::default()
        },
    )?;
    let config = RunConfig {
        preset: Preset::Tiny,
        epochs: 2,
        diffusion_steps: vec![6, 12],
        ce_steps: vec![6],
        fad_runs: 4,
        bootstrap_resamples: 500,
        ..RunConfig::default()
    };
    let data = TrainingData::from_cache(&cache, &config)?;
    let checkpoints = ModelKind::planned(&config)
        .into_iter()
        .map(|k| train_on(&data, &cache.basis, &cache.codec, &config, k, 1))
        .collect::<drumdiff::Result<Vec<_>>>()?;
    let eval = evaluate(&cache, &checkpoints, &config)?;
    eval.save(&out, cache.sample_rate(), true)?;
    println!("{}", results_tables(&eval.metric_csv(), &eval.contrast_csv())?);
    println!("{}", eval.runtime_csv());
    println!("CSVs and audio in {}", out.display());
    Ok(())
}
