use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const COSINE_OFFSET: f64 = 0.008;
pub const ALPHA_BAR_FLOOR: f64 = 1e-5;
pub const X0_CLIP: f64 = 6.0;

/// `alpha_bar[0..=N]` with `alpha_bar[0] = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

fn cosine_f(t: f64) -> f64 {
    ((t + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * FRAC_PI_2).cos().powi(2)
}

pub fn cosine_schedule(steps: usize) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::validation("steps", "must be at least 1"));
    }
    let f0 = cosine_f(0.0);
    let mut alpha_bar = Vec::with_capacity(steps + 1);
    alpha_bar.push(1.0);
    for n in 1..=steps {
        alpha_bar.push((cosine_f(n as f64 / steps as f64) / f0).max(ALPHA_BAR_FLOOR));
    }
    if alpha_bar.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Degenerate(format!("alpha_bar not strictly decreasing for N = {steps}")));
    }
    Ok(NoiseSchedule { alpha_bar })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn check_step(&self, n: usize) -> Result<()> {
        if n == 0 || n > self.steps() {
            return Err(Error::StepOutOfRange {
                index: n,
                steps: self.steps(),
            });
        }
        Ok(())
    }

    pub fn alpha_bar(&self, n: usize) -> f64 {
        self.alpha_bar[n]
    }

    pub fn alpha(&self, n: usize) -> f64 {
        self.alpha_bar[n] / self.alpha_bar[n - 1]
    }

    pub fn beta(&self, n: usize) -> f64 {
        1.0 - self.alpha(n)
    }

    /// `beta_tilde_n = beta_n (1 - alpha_bar_{n-1}) / (1 - alpha_bar_n)`.
    pub fn posterior_variance(&self, n: usize) -> f64 {
        self.beta(n) * (1.0 - self.alpha_bar[n - 1]) / (1.0 - self.alpha_bar[n])
    }

    /// Coefficients of `x0` and `x_n` in the posterior mean.
    pub fn posterior_coefficients(&self, n: usize) -> (f64, f64) {
        let ab = self.alpha_bar[n];
        let ab_prev = self.alpha_bar[n - 1];
        let beta = self.beta(n);
        (
            beta * ab_prev.sqrt() / (1.0 - ab),
            (1.0 - ab_prev) * self.alpha(n).sqrt() / (1.0 - ab),
        )
    }

    pub fn q_sample(&self, x0: &[f64], n: usize, eps: &[f64]) -> Result<Vec<f64>> {
        self.check_step(n)?;
        if x0.len() != eps.len() {
            return Err(Error::Shape(format!("x0 has {} values, eps {}", x0.len(), eps.len())));
        }
        let a = self.alpha_bar[n].sqrt();
        let b = (1.0 - self.alpha_bar[n]).sqrt();
        Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
    }

    /// Clipped clean estimate from a noise prediction.
    pub fn predict_x0(&self, x_n: &[f64], n: usize, eps_hat: &[f64]) -> Vec<f64> {
        let a = self.alpha_bar[n].sqrt();
        let b = (1.0 - self.alpha_bar[n]).sqrt();
        x_n.iter()
            .zip(eps_hat)
            .map(|(x, e)| ((x - b * e) / a).clamp(-X0_CLIP, X0_CLIP))
            .collect()
    }

    /// One ancestral step `x_n -> x_{n-1}`; no noise is added at `n = 1`.
    pub fn reverse_step<R: Rng>(&self, x_n: &[f64], n: usize, eps_hat: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        self.check_step(n)?;
        if x_n.len() != eps_hat.len() {
            return Err(Error::Shape(format!("x_n has {} values, eps_hat {}", x_n.len(), eps_hat.len())));
        }
        let x0 = self.predict_x0(x_n, n, eps_hat);
        let (c0, cn) = self.posterior_coefficients(n);
        let sigma = if n > 1 { self.posterior_variance(n).sqrt() } else { 0.0 };
        Ok(x0
            .iter()
            .zip(x_n)
            .map(|(a, b)| {
                let mean = c0 * a + cn * b;
                if n > 1 {
                    mean + sigma * rng.sample::<f64, _>(StandardNormal)
                } else {
                    mean
                }
            })
            .collect())
    }
}
