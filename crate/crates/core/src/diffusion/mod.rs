//! Cosine-schedule DDPM over standardized PCA trajectories.

mod schedule;

pub use schedule::{cosine_schedule, NoiseSchedule, ALPHA_BAR_FLOOR, COSINE_OFFSET, X0_CLIP};

use candle_core::{DType, Tensor, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::frames::Frames;
use crate::model::{SequenceConfig, SequenceInput, SequenceModel};
use crate::nn::{tensor_from, tensor_to_vec, Dropout, ParamStore};
use crate::{Error, Result};

pub const SUPPORTED_STEPS: [usize; 4] = [6, 12, 25, 50];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub target_dim: usize,
    pub cond_dim: usize,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub dropout: f64,
    pub ffn_mult: usize,
    pub seed: u64,
}

impl DenoiserConfig {
    pub fn desk(target_dim: usize, cond_dim: usize) -> Self {
        Self {
            target_dim,
            cond_dim,
            width: 128,
            layers: 3,
            heads: 4,
            dropout: 0.1,
            ffn_mult: 4,
            seed: 1234,
        }
    }

    pub fn sequence(&self) -> SequenceConfig {
        SequenceConfig {
            target_dim: self.target_dim,
            cond_dim: self.cond_dim,
            width: self.width,
            layers: self.layers,
            heads: self.heads,
            dropout: self.dropout,
            ffn_mult: self.ffn_mult,
            seed: self.seed,
        }
    }
}

/// Frame-centre times relative to the clip start.
pub fn relative_times(frames: usize, frame_rate: f64) -> Vec<f64> {
    (0..frames).map(|j| (j as f64 + 0.5) / frame_rate).collect()
}

/// Pads `(T_i, dim)` items to the longest clip.
pub fn pad_frames(items: &[&Frames], dtype: DType) -> Result<Tensor> {
    let dim = items.first().ok_or_else(|| Error::Shape("empty batch".into()))?.dim();
    let t = items.iter().map(|f| f.rows()).max().unwrap_or(0);
    let mut data = vec![0.0; items.len() * t * dim];
    for (b, f) in items.iter().enumerate() {
        if f.dim() != dim {
            return Err(Error::Shape(format!("item widths {} and {}", f.dim(), dim)));
        }
        data[b * t * dim..b * t * dim + f.rows() * dim].copy_from_slice(f.as_slice());
    }
    tensor_from(data, &[items.len(), t, dim], dtype)
}

/// Padded targets and frame masks for one optimizer step.
pub struct SequenceBatch {
    /// `(B, T, K)`.
    pub x0: Tensor,
    /// `(B, T)`, 1 for valid frames.
    pub mask: Tensor,
    pub rel_times: Vec<f64>,
    pub valid: usize,
}

impl SequenceBatch {
    pub fn new(targets: &[&Frames], masks: &[&[bool]], frame_rate: f64, dtype: DType) -> Result<Self> {
        if targets.len() != masks.len() {
            return Err(Error::Shape("one mask per target".into()));
        }
        let x0 = pad_frames(targets, dtype)?;
        let (b, t, _) = x0.dims3()?;
        let mut m = vec![0.0; b * t];
        let mut valid = 0;
        for (i, (target, mask)) in targets.iter().zip(masks).enumerate() {
            if mask.len() != target.rows() {
                return Err(Error::Shape(format!("mask of {} for {} frames", mask.len(), target.rows())));
            }
            for (j, &on) in mask.iter().enumerate() {
                if on {
                    m[i * t + j] = 1.0;
                    valid += 1;
                }
            }
        }
        Ok(Self {
            x0,
            mask: tensor_from(m, &[b, t], dtype)?,
            rel_times: relative_times(t, frame_rate),
            valid,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.x0.dims()[0]
    }

    pub fn frames(&self) -> usize {
        self.x0.dims()[1]
    }
}

/// Diffusion indices and Gaussian noise for one batch.
pub struct NoiseDraw {
    pub steps: Vec<usize>,
    pub eps: Tensor,
}

impl NoiseDraw {
    pub fn sample(schedule: &NoiseSchedule, shape: &[usize], rng: &mut ChaCha8Rng, dtype: DType) -> Result<Self> {
        let steps = (0..shape[0]).map(|_| rng.random_range(1..=schedule.steps())).collect();
        let count = shape.iter().product();
        let eps = (0..count).map(|_| rng.sample(StandardNormal)).collect();
        Ok(Self {
            steps,
            eps: tensor_from(eps, shape, dtype)?,
        })
    }

    /// Per-example `sqrt(alpha_bar_n)` and `sqrt(1 - alpha_bar_n)` as `(B, 1, 1)`.
    pub fn scales(&self, schedule: &NoiseSchedule, dtype: DType) -> Result<(Tensor, Tensor)> {
        for &n in &self.steps {
            schedule.check_step(n)?;
        }
        let b = self.steps.len();
        let signal = self.steps.iter().map(|&n| schedule.alpha_bar(n).sqrt()).collect();
        let noise = self.steps.iter().map(|&n| (1.0 - schedule.alpha_bar(n)).sqrt()).collect();
        Ok((tensor_from(signal, &[b, 1, 1], dtype)?, tensor_from(noise, &[b, 1, 1], dtype)?))
    }
}

/// Loss value plus the intermediates the auxiliary loss reuses.
pub struct EpsLoss {
    pub loss: Tensor,
    pub x_n: Tensor,
    pub eps_hat: Tensor,
}

impl EpsLoss {
    /// Unclipped `x0` estimate at the sampled indices.
    pub fn x0_hat(&self, schedule: &NoiseSchedule, draw: &NoiseDraw) -> Result<Tensor> {
        let (signal, noise) = draw.scales(schedule, self.x_n.dtype())?;
        Ok((&self.x_n - self.eps_hat.broadcast_mul(&noise)?)?.broadcast_div(&signal)?)
    }
}

/// Mean squared error over valid frames and all target channels.
pub fn masked_mse(pred: &Tensor, target: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let (_, _, k) = target.dims3()?;
    let valid = mask.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if valid <= 0.0 {
        return Err(Error::EmptyMask);
    }
    let diff = (pred - target)?.sqr()?.broadcast_mul(&mask.unsqueeze(D::Minus1)?)?;
    Ok((diff.sum_all()? / (valid * k as f64))?)
}

/// Noise-prediction loss with an arbitrary predictor `(x_n, steps) -> eps_hat`.
pub fn eps_loss_with<F>(batch: &SequenceBatch, schedule: &NoiseSchedule, draw: &NoiseDraw, predict: F) -> Result<EpsLoss>
where
    F: FnOnce(&Tensor, &[usize]) -> Result<Tensor>,
{
    if batch.valid == 0 {
        return Err(Error::EmptyMask);
    }
    let (signal, noise) = draw.scales(schedule, batch.x0.dtype())?;
    let x_n = (batch.x0.broadcast_mul(&signal)? + draw.eps.broadcast_mul(&noise)?)?;
    let eps_hat = predict(&x_n, &draw.steps)?;
    if eps_hat.dims() != batch.x0.dims() {
        return Err(Error::Shape(format!("prediction {:?} for target {:?}", eps_hat.dims(), batch.x0.dims())));
    }
    let loss = masked_mse(&eps_hat, &draw.eps, &batch.mask)?;
    Ok(EpsLoss { loss, x_n, eps_hat })
}

pub struct Denoiser {
    config: DenoiserConfig,
    model: SequenceModel,
}

impl Denoiser {
    pub fn new(config: DenoiserConfig, dtype: DType) -> Result<Self> {
        let model = SequenceModel::new(config.sequence(), true, dtype)?;
        Ok(Self { config, model })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        self.model.params()
    }

    pub fn dtype(&self) -> DType {
        self.model.dtype()
    }

    /// `eps_hat (B, T, K)` for noised `x_n`.
    pub fn denoise(
        &self,
        x_n: &Tensor,
        steps: &[usize],
        cond: &Tensor,
        mask: &Tensor,
        rel_times: &[f64],
        dropout: &mut Dropout,
    ) -> Result<Tensor> {
        let input = SequenceInput {
            x: Some(x_n),
            cond,
            mask,
            steps: Some(steps),
            rel_times,
        };
        self.model.forward(&input, dropout)
    }

    pub fn eps_loss(
        &self,
        batch: &SequenceBatch,
        cond: &Tensor,
        schedule: &NoiseSchedule,
        draw: &NoiseDraw,
        dropout: &mut Dropout,
    ) -> Result<EpsLoss> {
        eps_loss_with(batch, schedule, draw, |x_n, steps| {
            self.denoise(x_n, steps, cond, &batch.mask, &batch.rel_times, dropout)
        })
    }

    /// Ancestral sampling for one clip, starting from Gaussian `x_N`.
    pub fn sample(
        &self,
        cond: &Frames,
        mask: &[bool],
        frame_rate: f64,
        schedule: &NoiseSchedule,
        rng: &mut ChaCha8Rng,
    ) -> Result<Frames> {
        let t = cond.rows();
        let k = self.config.target_dim;
        if mask.len() != t {
            return Err(Error::Shape(format!("mask of {} for {t} frames", mask.len())));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::EmptyMask);
        }
        let dtype = self.dtype();
        let cond = pad_frames(&[cond], dtype)?;
        let mask_t = tensor_from(mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(), &[1, t], dtype)?;
        let rel_times = relative_times(t, frame_rate);
        let mut x: Vec<f64> = (0..t * k).map(|_| rng.sample(StandardNormal)).collect();
        for n in (1..=schedule.steps()).rev() {
            let x_t = tensor_from(x.clone(), &[1, t, k], dtype)?;
            let eps_hat = self.denoise(&x_t, &[n], &cond, &mask_t, &rel_times, &mut Dropout::eval())?;
            x = schedule.reverse_step(&x, n, &tensor_to_vec(&eps_hat)?, rng)?;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step: 0,
                detail: "sampled trajectory".into(),
            });
        }
        Ok(Frames::from_vec(k, x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::scalar;
    use rand::SeedableRng;

    fn toy_config() -> DenoiserConfig {
        DenoiserConfig {
            target_dim: 3,
            cond_dim: 5,
            width: 8,
            layers: 1,
            heads: 2,
            dropout: 0.0,
            ffn_mult: 2,
            seed: 5,
        }
    }

    fn random_frames(rows: usize, dim: usize, rng: &mut ChaCha8Rng) -> Frames {
        Frames::from_vec(dim, (0..rows * dim).map(|_| rng.sample(StandardNormal)).collect())
    }

    #[test]
    fn oracle_prediction_gives_zero_loss() {
        let s = cosine_schedule(12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x0 = random_frames(6, 3, &mut rng);
        let batch = SequenceBatch::new(&[&x0], &[&[true; 6]], 62.5, DType::F64).unwrap();
        let draw = NoiseDraw::sample(&s, &[1, 6, 3], &mut rng, DType::F64).unwrap();
        let out = eps_loss_with(&batch, &s, &draw, |_, _| Ok(draw.eps.clone())).unwrap();
        assert_eq!(scalar(&out.loss).unwrap(), 0.0);
        let x0_hat = tensor_to_vec(&out.x0_hat(&s, &draw).unwrap()).unwrap();
        for (a, b) in x0_hat.iter().zip(x0.as_slice()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_prediction_loss_is_unit() {
        let s = cosine_schedule(25).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x0 = Frames::zeros(1000, 10);
        let batch = SequenceBatch::new(&[&x0], &[&vec![true; 1000]], 62.5, DType::F64).unwrap();
        let draw = NoiseDraw::sample(&s, &[1, 1000, 10], &mut rng, DType::F64).unwrap();
        let out = eps_loss_with(&batch, &s, &draw, |x, _| Ok(x.zeros_like()?)).unwrap();
        assert!((scalar(&out.loss).unwrap() - 1.0).abs() < 0.03);
    }

    #[test]
    fn hand_computed_masked_mse() {
        let pred = tensor_from(vec![1.0, 2.0, 0.0, 0.0, 5.0, 5.0], &[1, 3, 2], DType::F64).unwrap();
        let target = tensor_from(vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0], &[1, 3, 2], DType::F64).unwrap();
        let mask = tensor_from(vec![1.0, 1.0, 0.0], &[1, 3], DType::F64).unwrap();
        let loss = scalar(&masked_mse(&pred, &target, &mask).unwrap()).unwrap();
        assert!((loss - (1.0 + 4.0 + 1.0 + 1.0) / 4.0).abs() < 1e-15);
        let empty = tensor_from(vec![0.0; 3], &[1, 3], DType::F64).unwrap();
        assert!(matches!(masked_mse(&pred, &target, &empty), Err(Error::EmptyMask)));
    }

    #[test]
    fn empty_mask_is_an_error() {
        let s = cosine_schedule(6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x0 = Frames::zeros(4, 3);
        let batch = SequenceBatch::new(&[&x0], &[&[false; 4]], 62.5, DType::F64).unwrap();
        let draw = NoiseDraw::sample(&s, &[1, 4, 3], &mut rng, DType::F64).unwrap();
        assert!(matches!(
            eps_loss_with(&batch, &s, &draw, |x, _| Ok(x.clone())),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let s = cosine_schedule(6).unwrap();
        let x0 = Frames::zeros(2, 3);
        let batch = SequenceBatch::new(&[&x0], &[&[true; 2]], 62.5, DType::F64).unwrap();
        let draw = NoiseDraw {
            steps: vec![7],
            eps: tensor_from(vec![0.0; 6], &[1, 2, 3], DType::F64).unwrap(),
        };
        assert!(matches!(
            eps_loss_with(&batch, &s, &draw, |x, _| Ok(x.clone())),
            Err(Error::StepOutOfRange { .. })
        ));
    }

    fn masked_pair(rng: &mut ChaCha8Rng) -> (Frames, Frames, Frames, Frames, Vec<bool>) {
        let x0 = random_frames(7, 3, rng);
        let h = random_frames(7, 5, rng);
        let mask = vec![false, true, true, true, true, false, false];
        let mut x0z = x0.clone();
        let mut hz = h.clone();
        for (j, &m) in mask.iter().enumerate() {
            if !m {
                x0z.row_mut(j).fill(0.0);
                hz.row_mut(j).fill(0.0);
            }
        }
        (x0, h, x0z, hz, mask)
    }

    #[test]
    fn masked_frames_do_not_affect_loss() {
        let s = cosine_schedule(12).unwrap();
        let d = Denoiser::new(toy_config(), DType::F64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (x0, h, x0z, hz, mask) = masked_pair(&mut rng);
        let draw = NoiseDraw::sample(&s, &[1, 7, 3], &mut rng, DType::F64).unwrap();
        let loss = |x0: &Frames, h: &Frames| {
            let batch = SequenceBatch::new(&[x0], &[&mask], 62.5, DType::F64).unwrap();
            let cond = pad_frames(&[h], DType::F64).unwrap();
            scalar(&d.eps_loss(&batch, &cond, &s, &draw, &mut Dropout::eval()).unwrap().loss).unwrap()
        };
        assert_eq!(loss(&x0, &h), loss(&x0z, &hz));
    }

    #[test]
    fn output_shape_and_determinism() {
        let s = cosine_schedule(6).unwrap();
        let d = Denoiser::new(toy_config(), DType::F64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = random_frames(9, 5, &mut rng);
        let mask = vec![true; 9];
        let a = d.sample(&h, &mask, 62.5, &s, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = d.sample(&h, &mask, 62.5, &s, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!((a.rows(), a.dim()), (9, 3));
        assert_eq!(a, b);
        assert!(a.as_slice().iter().all(|v| v.is_finite()));
        let c = d.sample(&h, &mask, 62.5, &s, &mut ChaCha8Rng::seed_from_u64(12)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let s = cosine_schedule(12).unwrap();
        let d = Denoiser::new(toy_config(), DType::F64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x0 = random_frames(4, 3, &mut rng);
        let h = random_frames(4, 5, &mut rng);
        let batch = SequenceBatch::new(&[&x0], &[&[true, true, true, false]], 62.5, DType::F64).unwrap();
        let cond = pad_frames(&[&h], DType::F64).unwrap();
        let draw = NoiseDraw::sample(&s, &[1, 4, 3], &mut rng, DType::F64).unwrap();
        let loss = || d.eps_loss(&batch, &cond, &s, &draw, &mut Dropout::eval()).unwrap().loss;
        let grads = loss().backward().unwrap();
        let mut checked = 0;
        for (name, var) in d.params().named() {
            let grad = tensor_to_vec(grads.get(var.as_tensor()).unwrap()).unwrap();
            let base = tensor_to_vec(var.as_tensor()).unwrap();
            for idx in [0, base.len() / 2, base.len() - 1] {
                let step = 1e-6;
                let eval_at = |delta: f64| {
                    let mut v = base.clone();
                    v[idx] += delta;
                    var.set(&tensor_from(v, var.dims(), DType::F64).unwrap()).unwrap();
                    scalar(&loss()).unwrap()
                };
                let fd = (eval_at(step) - eval_at(-step)) / (2.0 * step);
                var.set(&tensor_from(base.clone(), var.dims(), DType::F64).unwrap()).unwrap();
                let rel = (fd - grad[idx]).abs() / fd.abs().max(grad[idx].abs()).max(1e-6);
                assert!(rel < 1e-3, "{name}[{idx}]: fd {fd} vs {}", grad[idx]);
                checked += 1;
            }
        }
        assert!(checked > 40);
    }
}
