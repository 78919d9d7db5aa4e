#![allow(dead_code)]

use drumdiff::pipeline::train::Checkpoint;
use drumdiff::pipeline::{build_cache, synthesize_dataset, train_on, Cache, CacheConfig, DatasetSpec, ModelKind, Preset, RunConfig, TrainingData};

pub fn small_cache(patterns: usize, seed: u64) -> Cache {
    let spec = DatasetSpec {
        patterns,
        bars: 3,
        bpm_range: (124.0, 132.0),
        ..DatasetSpec::default()
    };
    build_cache(&synthesize_dataset(&spec, seed).unwrap(), &CacheConfig::default()).unwrap()
}

pub fn tiny_config() -> RunConfig {
    RunConfig {
        preset: Preset::Tiny,
        epochs: 2,
        max_steps: Some(4),
        diffusion_steps: vec![6, 12],
        ce_steps: vec![6],
        val_draws: 1,
        fad_runs: 2,
        bootstrap_resamples: 200,
        ..RunConfig::default()
    }
}

pub fn train_all(cache: &Cache, config: &RunConfig) -> Vec<Checkpoint> {
    let data = TrainingData::from_cache(cache, config).unwrap();
    ModelKind::planned(config)
        .into_iter()
        .map(|k| train_on(&data, &cache.basis, &cache.codec, config, k, 1).unwrap())
        .collect()
}
