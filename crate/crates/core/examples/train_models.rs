//! Train every planned model kind on a small cache with the tiny preset and
//! print the epoch logs.
//!
//!     cargo run --example train_models [out_dir]

use std::path::PathBuf;

use drumdiff::pipeline::{build_cache, synthesize_dataset, train_on, CacheConfig, DatasetSpec, ModelKind, Preset, RunConfig, TrainingData};

fn main() -> anyhow::Result<()> {
    env_logger::init();
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "target/example-output/train_models".into());
    let corpus = synthesize_dataset(
        &DatasetSpec {
            patterns: 10,
            bars: 3,
            ..DatasetSpec::default()
        },
        5,
    )?;
    let cache = build_cache(&corpus, &CacheConfig::default())?;
    let config = RunConfig {
        preset: Preset::Tiny,
        epochs: 3,
        diffusion_steps: vec![6, 25],
        ce_steps: vec![6],
        ..RunConfig::default()
    };
    let data = TrainingData::from_cache(&cache, &config)?;
    for kind in ModelKind::planned(&config) {
        let ckpt = train_on(&data, &cache.basis, &cache.codec, &config, kind, 1)?;
        ckpt.save(&out)?;
        let r = &ckpt.meta.report;
        println!("{kind}: initial val {:.4}, best {:.4} at epoch {}", r.initial_val_loss, r.best_val_loss, r.best_epoch);
        print!("{}", r.log_csv());
    }
    println!("checkpoints in {}", out.display());
    Ok(())
}
