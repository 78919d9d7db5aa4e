//! Overfit the desk denoiser on eight cached windows and compare its
//! 25-step samples with the PCA ceiling. `STEPS` overrides the step count.

use drumdiff::pipeline::overfit::overfit;

fn main() -> anyhow::Result<()> {
    env_logger::init();
    let steps: usize = std::env::var("STEPS").ok().and_then(|s| s.parse().ok()).unwrap_or(2000);
    let r = overfit(steps)?;
    println!(
        "{} windows, {} steps in {:.1}s: eps loss {:.4} -> {:.4} ({:.1}%)",
        r.windows,
        r.steps,
        r.train_seconds,
        r.initial_loss,
        r.final_loss,
        100.0 * r.loss_ratio()
    );
    println!(
        "mel MAE: samples {:.3} dB, PCA ceiling {:.3} dB, gap {:.3} dB",
        r.sample_mel_mae,
        r.ceiling_mel_mae,
        r.mel_gap()
    );
    println!("total {:.1}s", r.total_seconds);
    Ok(())
}
