//! Paired bootstrap intervals, sign-flip permutation tests and Holm adjustment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const RESAMPLES: usize = 2000;
pub const LEVEL: f64 = 0.95;

/// Mean computed relative to the first element, so constant inputs return
/// that constant exactly.
fn anchored_mean(values: impl Iterator<Item = f64>, anchor: f64, n: usize) -> f64 {
    anchor + values.map(|v| v - anchor).sum::<f64>() / n as f64
}

pub fn mean(d: &[f64]) -> f64 {
    anchored_mean(d.iter().copied(), d[0], d.len())
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        return sorted[lo];
    }
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn check(d: &[f64]) -> Result<()> {
    if d.is_empty() {
        return Err(Error::Degenerate("no paired differences".into()));
    }
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            step: 0,
            detail: "paired differences".into(),
        });
    }
    Ok(())
}

/// Percentile bootstrap interval of the mean difference.
pub fn bootstrap_ci(d: &[f64], resamples: usize, level: f64, seed: u64) -> Result<(f64, f64)> {
    check(d)?;
    if resamples == 0 || !(0.0..1.0).contains(&level) {
        return Err(Error::validation("bootstrap", "needs resamples > 0 and level in [0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = d.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| anchored_mean((0..n).map(|_| d[rng.random_range(0..n)]), d[0], n))
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((quantile(&means, tail), quantile(&means, 1.0 - tail)))
}

fn flip_mean_abs(d: &[f64], signs: impl Iterator<Item = bool>) -> f64 {
    let s: f64 = d.iter().zip(signs).map(|(v, keep)| if keep { *v } else { -v }).sum();
    (s / d.len() as f64).abs()
}

/// Two-sided sign-flip p value of the mean, counting the identity flip.
pub fn sign_flip_test(d: &[f64], samples: usize, seed: u64) -> Result<f64> {
    check(d)?;
    let observed = flip_mean_abs(d, std::iter::repeat(true));
    let threshold = observed * (1.0 - 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut count = 1usize;
    for _ in 0..samples {
        let flipped = flip_mean_abs(d, (0..d.len()).map(|_| rng.random::<bool>()));
        if flipped >= threshold {
            count += 1;
        }
    }
    Ok(count as f64 / (samples + 1) as f64)
}

/// Holm step-down adjustment, returned in input order.
pub fn holm_adjust(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; m];
    let mut running: f64 = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        running = running.max(((m - rank) as f64 * p[i]).min(1.0));
        out[i] = running;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedContrast {
    pub metric: String,
    pub system_a: String,
    pub system_b: String,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub p: f64,
    pub p_holm: f64,
}

/// Per-clip values of one metric for one system.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemValues<'a> {
    pub system: &'a str,
    pub values: &'a [f64],
}

/// Best system by mean (ties to the lexicographically lowest id) against
/// every other, with differences `best - other` and Holm adjustment.
pub fn best_vs_rest(
    metric: &str,
    higher_is_better: bool,
    systems: &[SystemValues],
    resamples: usize,
    seed: u64,
) -> Result<Vec<PairedContrast>> {
    if systems.len() < 2 {
        return Err(Error::Degenerate("contrasts need at least two systems".into()));
    }
    let n = systems[0].values.len();
    if systems.iter().any(|s| s.values.len() != n) {
        return Err(Error::Shape(format!("{metric}: systems cover different clip sets")));
    }
    for s in systems {
        check(s.values)?;
    }
    let means: Vec<f64> = systems.iter().map(|s| mean(s.values)).collect();
    let mut best = 0;
    for i in 1..systems.len() {
        let better = if higher_is_better { means[i] > means[best] } else { means[i] < means[best] };
        if better || (means[i] == means[best] && systems[i].system < systems[best].system) {
            best = i;
        }
    }
    let mut out = Vec::with_capacity(systems.len() - 1);
    for (i, other) in systems.iter().enumerate() {
        if i == best {
            continue;
        }
        let d: Vec<f64> = systems[best].values.iter().zip(other.values).map(|(a, b)| a - b).collect();
        let contrast_seed = seed.wrapping_add(1000 * i as u64);
        let (lo, hi) = bootstrap_ci(&d, resamples, LEVEL, contrast_seed)?;
        out.push(PairedContrast {
            metric: metric.to_string(),
            system_a: systems[best].system.to_string(),
            system_b: other.system.to_string(),
            estimate: mean(&d),
            lo,
            hi,
            p: sign_flip_test(&d, resamples, contrast_seed.wrapping_add(1))?,
            p_holm: 0.0,
        });
    }
    let adjusted = holm_adjust(&out.iter().map(|c| c.p).collect::<Vec<_>>());
    for (c, a) in out.iter_mut().zip(adjusted) {
        c.p_holm = a;
    }
    Ok(out)
}
