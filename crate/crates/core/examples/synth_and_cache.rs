//! Synthesize a small drum corpus, build the latent cache and reload it.
//!
//!     cargo run --example synth_and_cache [out_dir]

use std::path::PathBuf;

use drumdiff::pipeline::{build_cache, synthesize_dataset, Cache, CacheConfig, DatasetSpec};
use drumdiff::split::Split;

fn main() -> anyhow::Result<()> {
    env_logger::init();
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "target/example-output/synth_and_cache".into());
    let spec = DatasetSpec {
        patterns: 12,
        bars: 2,
        ..DatasetSpec::default()
    };
    let corpus = synthesize_dataset(&spec, 1)?;
    corpus.save(&out.join("corpus"))?;
    println!("{} performances, corpus hash {}", corpus.performances.len(), &corpus.content_hash()[..12]);
    for p in corpus.performances.iter().take(3) {
        println!("  {} {:.1} bpm, {:.2}s, {} events", p.id, p.bpm, p.duration, p.events.len());
    }

    let cache = build_cache(&corpus, &CacheConfig::default())?;
    cache.save(&out.join("cache"))?;
    for split in [Split::Train, Split::Validation, Split::Test] {
        println!("{split:?}: {} windows", cache.split(split).count());
    }
    println!("dropped by the boundary filter: {}", cache.manifest.dropped.len());
    let r = &cache.records[0];
    println!(
        "{}: {} samples, {} frames, codes {}x{}, x0 {}x{}",
        r.key(),
        r.audio.len(),
        r.y.rows(),
        r.codes.frames(),
        r.codes.codebooks(),
        r.x0.rows(),
        r.x0.dim()
    );

    let reloaded = Cache::load(&out.join("cache"))?;
    assert_eq!(reloaded.records.len(), cache.records.len());
    println!("reloaded {} records from {}", reloaded.records.len(), out.join("cache").display());
    Ok(())
}
