//! Codebook projection rank and PCA fidelity of the summed latents.
//!
//!     cargo run --example pca_diagnostics

use drumdiff::codec::projection_stack_rank;
use drumdiff::frames::Frames;
use drumdiff::pipeline::tables::pca_table;
use drumdiff::pipeline::{build_cache, synthesize_dataset, CacheConfig, DatasetSpec};
use drumdiff::split::Split;

fn main() -> anyhow::Result<()> {
    let corpus = synthesize_dataset(
        &DatasetSpec {
            patterns: 16,
            bars: 2,
            ..DatasetSpec::default()
        },
        3,
    )?;
    let cache = build_cache(&corpus, &CacheConfig::default())?;
    let (rank, tol) = projection_stack_rank(cache.codec.stack());
    println!("projection stack rank {rank} (tolerance {tol:.3e})");

    let basis = &cache.basis;
    println!("PCA fit on {} train frames", basis.frame_count());
    let mut cumulative = 0.0;
    for (i, e) in basis.explained_per_component().iter().enumerate() {
        cumulative += e;
        println!("  component {:>2}: {:.6}% (cumulative {:.6}%)", i + 1, 100.0 * e, 100.0 * cumulative);
    }
    let heldout: Vec<&Frames> = cache.records.iter().filter(|r| r.split != Split::Train).map(|r| &r.y).collect();
    println!("\n{}", pca_table(&basis.diagnostics(&heldout)));
    Ok(())
}
