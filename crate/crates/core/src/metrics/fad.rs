//! Fréchet audio distance with extrapolation to infinite sample size.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MetricSuite;
use crate::{Error, Result};

pub const LADDER_POINTS: usize = 5;
pub const LADDER_MIN_FRACTION: f64 = 0.25;
pub const DEFAULT_RUNS: usize = 8;
/// Ridge added to each covariance, relative to its mean diagonal.
pub const RIDGE: f64 = 1e-6;

/// Clip-level embedding model.
pub trait Embedder {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, audio: &[f32]) -> Vec<f64>;
}

/// Per-band mean and standard deviation of the log-mel frames.
pub struct MelStats {
    suite: MetricSuite,
}

impl MelStats {
    pub fn new(sample_rate: u32) -> Self {
        Self {
            suite: MetricSuite::new(sample_rate),
        }
    }
}

impl Embedder for MelStats {
    fn name(&self) -> &str {
        "mel-stats"
    }

    fn dim(&self) -> usize {
        2 * super::MEL_BANDS
    }

    fn embed(&self, audio: &[f32]) -> Vec<f64> {
        let mel = self.suite.log_mel(audio);
        let n = mel.len() as f64;
        let bands = super::MEL_BANDS;
        let mut out = vec![0.0; 2 * bands];
        for b in 0..bands {
            let mean = mel.iter().map(|r| r[b]).sum::<f64>() / n;
            let var = mel.iter().map(|r| (r[b] - mean).powi(2)).sum::<f64>() / n;
            out[b] = mean;
            out[bands + b] = var.sqrt();
        }
        out
    }
}

fn moments(set: &[&[f64]]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = set.len();
    if n < 2 {
        return Err(Error::Degenerate("at least two embeddings are needed".into()));
    }
    let d = set[0].len();
    if set.iter().any(|e| e.len() != d) {
        return Err(Error::Shape("embeddings differ in length".into()));
    }
    let mut mean = DVector::zeros(d);
    for e in set {
        mean += DVector::from_column_slice(e);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for e in set {
        let c = DVector::from_column_slice(e) - &mean;
        cov.syger(1.0, &c, &c, 1.0);
    }
    cov.fill_upper_triangle_with_lower_triangle();
    cov /= (n - 1) as f64;
    let ridge = RIDGE * (cov.trace() / d as f64).max(f64::MIN_POSITIVE);
    for i in 0..d {
        cov[(i, i)] += ridge;
    }
    Ok((mean, cov))
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)` on ridge-regularized covariances.
pub fn frechet_distance(a: &[&[f64]], b: &[&[f64]]) -> Result<f64> {
    let (ma, ca) = moments(a)?;
    let (mb, cb) = moments(b)?;
    if ma.len() != mb.len() {
        return Err(Error::Shape("embedding sets differ in width".into()));
    }
    let root = psd_sqrt(&ca);
    let mut inner = &root * &cb * &root;
    inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let dist = (ma - mb).norm_squared() + ca.trace() + cb.trace() - 2.0 * cross;
    Ok(dist.max(0.0))
}

/// Least-squares fit `fad = a + b / n`; returns `(a, r2)`. A fit with no
/// variance in `fad` reports `r2 = 1`.
pub fn extrapolate(points: &[(usize, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| 1.0 / p.0 as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if ss_tot == 0.0 {
        return (intercept, 1.0);
    }
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    (intercept, 1.0 - ss_res / ss_tot)
}

/// Five log-spaced subsample sizes from 25% to 100% of `n`.
pub fn ladder(n: usize) -> Vec<usize> {
    (0..LADDER_POINTS)
        .map(|i| {
            let f = LADDER_MIN_FRACTION * (1.0 / LADDER_MIN_FRACTION).powf(i as f64 / (LADDER_POINTS - 1) as f64);
            ((n as f64 * f).round() as usize).clamp(2, n)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FadResult {
    pub fad_inf: f64,
    pub r2: f64,
    /// Per-run intercepts.
    pub intercepts: Vec<f64>,
    pub ladder: Vec<usize>,
}

/// Repeated subsample-ladder fits; `fad_inf` is the mean intercept and `r2`
/// the coefficient of determination of the pooled fit.
pub fn fad_infinity(generated: &[Vec<f64>], reference: &[Vec<f64>], runs: usize, seed: u64) -> Result<FadResult> {
    let n = generated.len().min(reference.len());
    if n < 2 || runs == 0 {
        return Err(Error::Degenerate(format!("FAD needs >= 2 clips and >= 1 run, got {n} and {runs}")));
    }
    let sizes = ladder(n);
    let mut pooled = Vec::with_capacity(runs * sizes.len());
    let mut intercepts = Vec::with_capacity(runs);
    for run in 0..runs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(run as u64));
        let mut points = Vec::with_capacity(sizes.len());
        for &size in &sizes {
            let g: Vec<&[f64]> = sample(&mut rng, generated.len(), size).iter().map(|i| generated[i].as_slice()).collect();
            let r: Vec<&[f64]> = sample(&mut rng, reference.len(), size).iter().map(|i| reference[i].as_slice()).collect();
            points.push((size, frechet_distance(&g, &r)?));
        }
        intercepts.push(extrapolate(&points).0);
        pooled.extend(points);
    }
    let (_, r2) = extrapolate(&pooled);
    Ok(FadResult {
        fad_inf: intercepts.iter().sum::<f64>() / runs as f64,
        r2,
        intercepts,
        ladder: sizes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian_set(n: usize, dim: usize, offset: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..dim).map(|_| offset + rng.sample::<f64, _>(StandardNormal)).collect())
            .collect()
    }

    fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
        v.iter().map(|e| e.as_slice()).collect()
    }

    #[test]
    fn identical_sets_have_zero_distance() {
        let set = gaussian_set(50, 128, 0.0, 1);
        assert!(frechet_distance(&refs(&set), &refs(&set)).unwrap() <= 1e-6);
        let small = gaussian_set(40, 8, 0.0, 2);
        assert!(frechet_distance(&refs(&small), &refs(&small)).unwrap() <= 1e-9);
    }

    #[test]
    fn one_dimensional_mean_offset() {
        let d = 1.5;
        let a = gaussian_set(20_000, 1, 0.0, 3);
        let b = gaussian_set(20_000, 1, d, 4);
        let fad = frechet_distance(&refs(&a), &refs(&b)).unwrap();
        assert!((fad - d * d).abs() < 0.05, "{fad}");
        let small_a = gaussian_set(400, 1, 0.0, 5);
        let small_b = gaussian_set(400, 1, d, 6);
        let small = frechet_distance(&refs(&small_a), &refs(&small_b)).unwrap();
        assert!((fad - d * d).abs() <= (small - d * d).abs() + 0.05);
        let result = fad_infinity(&a[..2000], &b[..2000], 8, 7).unwrap();
        assert!((result.fad_inf - d * d).abs() < 0.15, "{}", result.fad_inf);
    }

    #[test]
    fn extrapolation_conventions() {
        let (a, r2) = extrapolate(&[(10, 2.0), (20, 2.0), (40, 2.0)]);
        assert_eq!((a, r2), (2.0, 1.0));
        let (a, r2) = extrapolate(&[(10, 1.0 + 5.0 / 10.0), (20, 1.0 + 5.0 / 20.0), (50, 1.0 + 5.0 / 50.0)]);
        assert!((a - 1.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eight_runs_emit_intercepts_and_fit() {
        let a = gaussian_set(50, 4, 0.0, 8);
        let b = gaussian_set(50, 4, 0.5, 9);
        let result = fad_infinity(&a, &b, DEFAULT_RUNS, 10).unwrap();
        assert_eq!(result.intercepts.len(), 8);
        assert_eq!(result.ladder, vec![13, 18, 25, 35, 50]);
        assert!(result.fad_inf.is_finite() && result.r2 <= 1.0);
        assert_eq!(result, fad_infinity(&a, &b, DEFAULT_RUNS, 10).unwrap());
        assert!(fad_infinity(&a[..1], &b, 8, 1).is_err());
    }

    #[test]
    fn mel_stats_embedding() {
        let e = MelStats::new(16_000);
        let audio: Vec<f32> = (0..8000).map(|i| ((i as f32) * 0.05).sin() * 0.2).collect();
        let v = e.embed(&audio);
        assert_eq!(v.len(), e.dim());
        assert!(v.iter().all(|x| x.is_finite()));
        assert_eq!(v, e.embed(&audio));
    }
}
