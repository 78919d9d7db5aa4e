//! Paired best-vs-rest contrasts and extrapolated FAD on toy data.
//!
//!     cargo run --example stats_and_fad

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use drumdiff::metrics::fad::{fad_infinity, Embedder, MelStats, DEFAULT_RUNS};
use drumdiff::stats::{best_vs_rest, SystemValues, RESAMPLES};

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let clips = 40;
    let truth: Vec<f64> = (0..clips).map(|_| 6.0 + rng.sample::<f64, _>(StandardNormal)).collect();
    let system = |offset: f64, rng: &mut ChaCha8Rng| -> Vec<f64> {
        truth.iter().map(|t| t + offset + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect()
    };
    let a = system(0.0, &mut rng);
    let b = system(0.1, &mut rng);
    let c = system(1.0, &mut rng);
    let systems = [
        SystemValues { system: "model_a", values: &a },
        SystemValues { system: "model_b", values: &b },
        SystemValues { system: "model_c", values: &c },
    ];
    println!("mel_mae_db (lower is better), {clips} clips");
    for k in best_vs_rest("mel_mae_db", false, &systems, RESAMPLES, 1)? {
        println!(
            "  {} - {}: {:+.3} [{:+.3}, {:+.3}] p {:.4} holm {:.4}",
            k.system_a, k.system_b, k.estimate, k.lo, k.hi, k.p, k.p_holm
        );
    }

    let sr = 16_000;
    let embedder = MelStats::new(sr);
    let tone = |freq: f64, rng: &mut ChaCha8Rng| -> Vec<f32> {
        let f = freq * (1.0 + 0.05 * rng.sample::<f64, _>(StandardNormal));
        (0..sr as usize / 2)
            .map(|i| {
                let t = i as f64 / sr as f64;
                ((2.0 * std::f64::consts::PI * f * t).sin() * (-6.0 * t).exp() * 0.5 + 0.01 * rng.random_range(-1.0..1.0)) as f32
            })
            .collect()
    };
    let reference: Vec<Vec<f64>> = (0..32).map(|_| embedder.embed(&tone(220.0, &mut rng))).collect();
    for (name, freq) in [("close", 230.0), ("far", 440.0)] {
        let generated: Vec<Vec<f64>> = (0..32).map(|_| embedder.embed(&tone(freq, &mut rng))).collect();
        let fad = fad_infinity(&generated, &reference, DEFAULT_RUNS, 2)?;
        println!("{name}: FAD-inf {:.3} (R2 {:.3}) over ladder {:?}", fad.fad_inf, fad.r2, fad.ladder);
    }
    Ok(())
}
