//! Auxiliary codebook cross-entropy on the denoiser's clean estimate.
//!
//! The estimate is mapped back to the codec latent space, compared stage by
//! stage against frozen codebook entries using target-index residuals, and
//! scored with negative-distance logits.

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::codec::{CodeIndices, CodebookStack};
use crate::diffusion::EpsLoss;
use crate::frames::Frames;
use crate::nn::tensor_from;
use crate::pca::PcaBasis;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxLossConfig {
    pub lambda_ce: f64,
    pub enabled: bool,
}

impl Default for AuxLossConfig {
    fn default() -> Self {
        Self {
            lambda_ce: 0.10,
            enabled: true,
        }
    }
}

impl AuxLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_ce >= 0.0) || !self.lambda_ce.is_finite() {
            return Err(Error::validation("aux.lambda_ce", "must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn active(&self) -> bool {
        self.enabled && self.lambda_ce > 0.0
    }
}

/// PCA inverse and de-standardization as constant tensors.
pub struct LatentMap {
    /// `(K, D)`, rows are principal directions.
    components: Tensor,
    mean: Tensor,
    coeff_mean: Tensor,
    coeff_std: Tensor,
}

impl LatentMap {
    pub fn new(basis: &PcaBasis, dtype: DType) -> Result<Self> {
        let (d, k) = (basis.dim(), basis.components());
        let u = basis.directions();
        let rows: Vec<f64> = (0..k).flat_map(|c| u.column(c).iter().copied().collect::<Vec<_>>()).collect();
        Ok(Self {
            components: tensor_from(rows, &[k, d], dtype)?,
            mean: tensor_from(basis.mean().to_vec(), &[d], dtype)?,
            coeff_mean: tensor_from(basis.coeff_mean().to_vec(), &[k], dtype)?,
            coeff_std: tensor_from(basis.coeff_std().to_vec(), &[k], dtype)?,
        })
    }

    /// `(B, T, K)` standardized coordinates to `(B, T, D)` latents.
    pub fn x0_to_latent(&self, x0: &Tensor) -> Result<Tensor> {
        let (b, t, k) = x0.dims3()?;
        let z = x0.broadcast_mul(&self.coeff_std)?.broadcast_add(&self.coeff_mean)?;
        let y = z.reshape((b * t, k))?.matmul(&self.components)?;
        Ok(y.reshape((b, t, ()))?.broadcast_add(&self.mean)?)
    }
}

/// Codebook projections, codes and target selections, detached from any graph.
pub struct FrozenCodebooks {
    projections: Vec<Tensor>,
    codes: Vec<Tensor>,
    entries: Vec<Frames>,
}

fn matrix_tensor(m: &nalgebra::DMatrix<f64>, dtype: DType) -> Result<Tensor> {
    let (r, c) = m.shape();
    let data = (0..r).flat_map(|i| (0..c).map(move |j| m[(i, j)])).collect();
    tensor_from(data, &[r, c], dtype)
}

impl FrozenCodebooks {
    pub fn new(stack: &CodebookStack, dtype: DType) -> Result<Self> {
        let k = stack.codebooks();
        Ok(Self {
            projections: (0..k).map(|i| matrix_tensor(stack.projection(i), dtype)).collect::<Result<_>>()?,
            codes: (0..k).map(|i| matrix_tensor(stack.codes(i), dtype)).collect::<Result<_>>()?,
            entries: (0..k).map(|i| stack.entries(i).clone()).collect(),
        })
    }

    /// Builds from explicit tensors; they are detached so no gradient reaches them.
    pub fn from_tensors(projections: Vec<Tensor>, codes: Vec<Tensor>) -> Result<Self> {
        if projections.len() != codes.len() || projections.is_empty() {
            return Err(Error::Shape("one code table per projection".into()));
        }
        let mut entries = Vec::with_capacity(codes.len());
        for (w, c) in projections.iter().zip(&codes) {
            let e = c.matmul(&w.t()?)?.to_dtype(DType::F64)?;
            let (_, d) = e.dims2()?;
            entries.push(Frames::from_vec(d, e.flatten_all()?.to_vec1::<f64>()?));
        }
        Ok(Self {
            projections: projections.iter().map(|t| t.detach()).collect(),
            codes: codes.iter().map(|t| t.detach()).collect(),
            entries,
        })
    }

    pub fn codebooks(&self) -> usize {
        self.codes.len()
    }

    pub fn entries_per_book(&self) -> usize {
        self.entries[0].rows()
    }

    fn dtype(&self) -> DType {
        self.codes[0].dtype()
    }

    /// Per codebook, the `(B, T, D)` target entries `e[k][q_jk]` (zero on padding).
    pub fn target_entries(&self, targets: &[&CodeIndices], frames: usize) -> Result<Vec<Tensor>> {
        let d = self.entries[0].dim();
        let b = targets.len();
        (0..self.codebooks())
            .map(|k| {
                let mut data = vec![0.0; b * frames * d];
                for (i, q) in targets.iter().enumerate() {
                    if q.codebooks() != self.codebooks() || q.frames() > frames {
                        return Err(Error::Shape(format!("codes {}x{}", q.frames(), q.codebooks())));
                    }
                    for j in 0..q.frames() {
                        let at = (i * frames + j) * d;
                        let m = q.frame(j)[k] as usize;
                        if m >= self.entries_per_book() {
                            return Err(Error::validation("code index", format!("{m} out of range")));
                        }
                        data[at..at + d].copy_from_slice(self.entries[k].row(m));
                    }
                }
                tensor_from(data, &[b, frames, d], self.dtype())
            })
            .collect()
    }

    /// Negative Euclidean distances `(N, M)` of residual rows `(N, D)` to codebook `k`.
    ///
    /// Entries are `W_k v_m` with orthonormal `W_k`, so the squared distance
    /// splits into the residual's out-of-subspace energy plus an `r`-dimensional
    /// distance.
    pub fn logits(&self, residual: &Tensor, k: usize) -> Result<Tensor> {
        let w = &self.projections[k];
        let coords = residual.matmul(w)?;
        let outside = (residual - coords.matmul(&w.t()?)?)?.sqr()?.sum_keepdim(D::Minus1)?;
        let inside = coords
            .unsqueeze(1)?
            .broadcast_sub(&self.codes[k].unsqueeze(0)?)?
            .sqr()?
            .sum(D::Minus1)?;
        Ok(inside.broadcast_add(&outside)?.sqrt()?.neg()?)
    }
}

/// Stagewise residuals `r_1 = y_hat`, `r_{k+1} = r_k - e[k][q_k]`.
pub fn residuals(y_hat: &Tensor, target_entries: &[Tensor]) -> Result<Vec<Tensor>> {
    let mut out = Vec::with_capacity(target_entries.len());
    let mut r = y_hat.clone();
    for (k, e) in target_entries.iter().enumerate() {
        out.push(r.clone());
        if k + 1 < target_entries.len() {
            r = (&r - e)?;
        }
    }
    Ok(out)
}

/// Reference logits `-||r - e_m||` against explicit entries.
pub fn reference_logits(r: &[f64], entries: &Frames) -> Vec<f64> {
    entries
        .iter_rows()
        .map(|e| -e.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .collect()
}

/// Mean cross-entropy over valid frames and all codebooks.
pub fn codebook_ce(
    y_hat: &Tensor,
    targets: &[&CodeIndices],
    mask: &Tensor,
    books: &FrozenCodebooks,
) -> Result<Tensor> {
    let (b, t, d) = y_hat.dims3()?;
    let m = books.entries_per_book();
    let n = b * t;
    let mask_values = mask.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    let valid = mask_values.iter().sum::<f64>();
    if valid <= 0.0 {
        return Err(Error::EmptyMask);
    }
    let entries = books.target_entries(targets, t)?;
    let rs = residuals(y_hat, &entries)?;
    let mut total: Option<Tensor> = None;
    for (k, r) in rs.iter().enumerate() {
        let mut onehot = vec![0.0; n * m];
        for (i, q) in targets.iter().enumerate() {
            for j in 0..q.frames() {
                if mask_values[i * t + j] > 0.0 {
                    onehot[(i * t + j) * m + q.frame(j)[k] as usize] = 1.0;
                }
            }
        }
        let onehot = tensor_from(onehot, &[n, m], y_hat.dtype())?;
        let logits = books.logits(&r.reshape((n, d))?, k)?;
        let max = logits.max_keepdim(D::Minus1)?.detach();
        let lse = (logits.broadcast_sub(&max)?.exp()?.sum_keepdim(D::Minus1)?.log()? + &max)?;
        let picked = (&logits * &onehot)?.sum_keepdim(D::Minus1)?;
        let row_mask = mask.reshape((n, 1))?;
        let ce = ((lse - picked)? * row_mask)?.sum_all()?;
        total = Some(match total {
            Some(acc) => (acc + ce)?,
            None => ce,
        });
    }
    let total = total.ok_or_else(|| Error::Shape("no codebooks".into()))?;
    Ok((total / (valid * books.codebooks() as f64))?)
}

/// Loss components of one step.
pub struct CombinedLoss {
    pub total: Tensor,
    pub ce: Option<Tensor>,
}

/// `L_eps + lambda * L_ce`; with the auxiliary term inactive the total is the
/// eps loss tensor itself.
pub fn combined_loss(
    eps: &EpsLoss,
    x0_hat: impl FnOnce() -> Result<Tensor>,
    latent: &LatentMap,
    targets: &[&CodeIndices],
    mask: &Tensor,
    books: &FrozenCodebooks,
    config: &AuxLossConfig,
) -> Result<CombinedLoss> {
    if !config.active() {
        return Ok(CombinedLoss {
            total: eps.loss.clone(),
            ce: None,
        });
    }
    let y_hat = latent.x0_to_latent(&x0_hat()?)?;
    let ce = codebook_ce(&y_hat, targets, mask, books)?;
    Ok(CombinedLoss {
        total: (&eps.loss + (&ce * config.lambda_ce)?)?,
        ce: Some(ce),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{cosine_schedule, eps_loss_with, pad_frames, Denoiser, DenoiserConfig, NoiseDraw, SequenceBatch};
    use crate::nn::{scalar, tensor_to_vec, Dropout};
    use crate::split::Split;
    use candle_core::Var;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_frames(rows: usize, dim: usize, rng: &mut ChaCha8Rng) -> Frames {
        Frames::from_vec(dim, (0..rows * dim).map(|_| rng.sample(StandardNormal)).collect())
    }

    fn setup() -> (CodebookStack, PcaBasis, Vec<(CodeIndices, Frames)>) {
        let stack = CodebookStack::random(12, 3, 6, 2, 21).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let clips: Vec<_> = (0..3)
            .map(|_| stack.quantize(&random_frames(10, 12, &mut rng)).unwrap())
            .collect();
        let train: Vec<_> = clips.iter().map(|(_, y)| (Split::Train, y)).collect();
        let basis = PcaBasis::fit(&train, 6).unwrap();
        (stack, basis, clips)
    }

    #[test]
    fn latent_map_matches_basis() {
        let (_, basis, clips) = setup();
        let map = LatentMap::new(&basis, DType::F64).unwrap();
        let y = &clips[0].1;
        let x0 = basis.encode_frames(y);
        let t = pad_frames(&[&x0], DType::F64).unwrap();
        let y_hat = tensor_to_vec(&map.x0_to_latent(&t).unwrap()).unwrap();
        for (a, b) in y_hat.iter().zip(y.as_slice()) {
            assert!((a - b).abs() < 1e-9);
        }
        let zero = Tensor::zeros((1, 2, 6), DType::F64, &candle_core::Device::Cpu).unwrap();
        let base = tensor_to_vec(&map.x0_to_latent(&zero).unwrap()).unwrap();
        let expected = basis.reconstruct(basis.coeff_mean());
        for (a, b) in base[..12].iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn latent_map_jvp_matches_finite_differences() {
        let (_, basis, _) = setup();
        let map = LatentMap::new(&basis, DType::F64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..12).map(|_| rng.sample(StandardNormal)).collect();
        let v: Vec<f64> = (0..12).map(|_| rng.sample(StandardNormal)).collect();
        let weights: Vec<f64> = (0..24).map(|_| rng.sample(StandardNormal)).collect();
        let var = Var::from_tensor(&tensor_from(x.clone(), &[1, 2, 6], DType::F64).unwrap()).unwrap();
        let w = tensor_from(weights.clone(), &[1, 2, 12], DType::F64).unwrap();
        let out = map.x0_to_latent(var.as_tensor()).unwrap().mul(&w).unwrap().sum_all().unwrap();
        let grad = tensor_to_vec(out.backward().unwrap().get(var.as_tensor()).unwrap()).unwrap();
        let jvp: f64 = grad.iter().zip(&v).map(|(g, v)| g * v).sum();
        let f = |x: &[f64]| {
            let rows = [&x[..6], &x[6..]];
            rows.iter()
                .enumerate()
                .map(|(j, r)| {
                    basis
                        .reconstruct(&basis.destandardize(r))
                        .iter()
                        .zip(&weights[j * 12..(j + 1) * 12])
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                })
                .sum::<f64>()
        };
        let h = 1e-5;
        let plus: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + h * b).collect();
        let minus: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a - h * b).collect();
        let fd = (f(&plus) - f(&minus)) / (2.0 * h);
        assert!((fd - jvp).abs() <= 1e-4 * fd.abs().max(jvp.abs()));
    }

    #[test]
    fn residual_identities() {
        let (stack, _, clips) = setup();
        let books = FrozenCodebooks::new(&stack, DType::F64).unwrap();
        let (q, y) = &clips[1];
        let entries = books.target_entries(&[q], q.frames()).unwrap();
        let y_t = pad_frames(&[y], DType::F64).unwrap();
        let rs = residuals(&y_t, &entries).unwrap();
        assert_eq!(tensor_to_vec(&rs[0]).unwrap(), tensor_to_vec(&y_t).unwrap());
        for k in 0..rs.len() - 1 {
            let next = tensor_to_vec(&(&rs[k] - &entries[k]).unwrap()).unwrap();
            assert_eq!(next, tensor_to_vec(&rs[k + 1]).unwrap());
        }
        let r2 = tensor_to_vec(&rs[1]).unwrap();
        for j in 0..q.frames() {
            let mut rest = vec![0.0; 12];
            for k in 1..3 {
                for (o, e) in rest.iter_mut().zip(stack.entry(k, q.frame(j)[k] as usize)) {
                    *o += e;
                }
            }
            for (a, b) in r2[j * 12..(j + 1) * 12].iter().zip(&rest) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn logits_follow_distance_order() {
        let (stack, _, _) = setup();
        let books = FrozenCodebooks::new(&stack, DType::F64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let r = random_frames(20, 12, &mut rng);
        for k in 0..3 {
            let logits = tensor_to_vec(&books.logits(&pad_frames(&[&r], DType::F64).unwrap().squeeze(0).unwrap(), k).unwrap()).unwrap();
            for (j, row) in r.iter_rows().enumerate() {
                let reference = reference_logits(row, stack.entries(k));
                let got = &logits[j * 6..(j + 1) * 6];
                for (a, b) in got.iter().zip(&reference) {
                    assert!((a - b).abs() < 1e-9);
                }
                let order = |v: &[f64]| {
                    let mut idx: Vec<usize> = (0..v.len()).collect();
                    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]));
                    idx
                };
                let mut dist: Vec<(f64, usize)> = stack
                    .entries(k)
                    .iter_rows()
                    .enumerate()
                    .map(|(m, e)| (e.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum(), m))
                    .collect();
                dist.sort_by(|a, b| a.0.total_cmp(&b.0));
                assert_eq!(order(got), dist.iter().map(|d| d.1).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn reference_logits_exact_entry_and_translation() {
        let (stack, _, _) = setup();
        let entries = stack.entries(1);
        let l = reference_logits(entries.row(3), entries);
        assert_eq!(l[3], 0.0);
        assert!(l.iter().enumerate().all(|(m, &v)| m == 3 || v < 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r: Vec<f64> = (0..12).map(|_| rng.sample(StandardNormal)).collect();
        let c: Vec<f64> = (0..12).map(|_| rng.random_range(-0.5..0.5)).collect();
        let shift = |v: &[f64]| v.iter().zip(&c).map(|(a, b)| a + b).collect::<Vec<_>>();
        let moved = Frames::from_rows(&entries.iter_rows().map(shift).collect::<Vec<_>>());
        let a = reference_logits(&r, entries);
        let b = reference_logits(&shift(&r), &moved);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn clean_latent_argmax_hits_targets() {
        let (stack, _, clips) = setup();
        let books = FrozenCodebooks::new(&stack, DType::F64).unwrap();
        let (q, y) = &clips[2];
        let entries = books.target_entries(&[q], q.frames()).unwrap();
        let rs = residuals(&pad_frames(&[y], DType::F64).unwrap(), &entries).unwrap();
        for (k, r) in rs.iter().enumerate() {
            let logits = tensor_to_vec(&books.logits(&r.squeeze(0).unwrap(), k).unwrap()).unwrap();
            for j in 0..q.frames() {
                let row = &logits[j * 6..(j + 1) * 6];
                let best = (0..6).max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a))).unwrap();
                assert_eq!(best, q.frame(j)[k] as usize);
            }
        }
    }

    #[test]
    fn ce_hand_computed() {
        let (stack, _, clips) = setup();
        let books = FrozenCodebooks::new(&stack, DType::F64).unwrap();
        let (q, y) = &clips[0];
        let mut mask = vec![1.0; q.frames()];
        mask[0] = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let noisy = Frames::from_vec(12, y.as_slice().iter().map(|v| v + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect());
        let y_t = pad_frames(&[&noisy], DType::F64).unwrap();
        let mask_t = tensor_from(mask.clone(), &[1, q.frames()], DType::F64).unwrap();
        let got = scalar(&codebook_ce(&y_t, &[q], &mask_t, &books).unwrap()).unwrap();
        let mut total = 0.0;
        for j in 1..q.frames() {
            let mut r = noisy.row(j).to_vec();
            for k in 0..3 {
                let l = reference_logits(&r, stack.entries(k));
                let lse = l.iter().map(|v| v.exp()).sum::<f64>().ln();
                let m = q.frame(j)[k] as usize;
                total += lse - l[m];
                for (a, e) in r.iter_mut().zip(stack.entry(k, m)) {
                    *a -= e;
                }
            }
        }
        let expected = total / ((q.frames() - 1) * 3) as f64;
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    }

    fn toy_denoiser() -> Denoiser {
        Denoiser::new(
            DenoiserConfig {
                target_dim: 6,
                cond_dim: 4,
                width: 8,
                layers: 1,
                heads: 2,
                dropout: 0.0,
                ffn_mult: 2,
                seed: 3,
            },
            DType::F64,
        )
        .unwrap()
    }

    #[test]
    fn zero_weight_reduces_to_eps_loss() {
        let (stack, basis, clips) = setup();
        let books = FrozenCodebooks::new(&stack, DType::F64).unwrap();
        let map = LatentMap::new(&basis, DType::F64).unwrap();
        let s = cosine_schedule(12).unwrap();
        let d = toy_denoiser();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (q, y) = &clips[0];
        let x0 = basis.encode_frames(y);
        let h = random_frames(q.frames(), 4, &mut rng);
        let mask = vec![true; q.frames()];
        let batch = SequenceBatch::new(&[&x0], &[&mask], 62.5, DType::F64).unwrap();
        let cond = pad_frames(&[&h], DType::F64).unwrap();
        let draw = NoiseDraw::sample(&s, &[1, q.frames(), 6], &mut rng, DType::F64).unwrap();
        let eps = d.eps_loss(&batch, &cond, &s, &draw, &mut Dropout::eval()).unwrap();
        for config in [
            AuxLossConfig {
                lambda_ce: 0.0,
                enabled: true,
            },
            AuxLossConfig {
                lambda_ce: 0.1,
                enabled: false,
            },
        ] {
            let out = combined_loss(&eps, || eps.x0_hat(&s, &draw), &map, &[q], &batch.mask, &books, &config).unwrap();
            assert_eq!(
                scalar(&out.total).unwrap().to_bits(),
                scalar(&eps.loss).unwrap().to_bits()
            );
            assert!(out.ce.is_none());
        }
    }

    #[test]
    fn gradients_reach_denoiser_but_not_codebooks() {
        let (stack, basis, clips) = setup();
        let projections: Vec<Var> = (0..3)
            .map(|k| Var::from_tensor(&matrix_tensor(stack.projection(k), DType::F64).unwrap()).unwrap())
            .collect();
        let codes: Vec<Var> = (0..3)
            .map(|k| Var::from_tensor(&matrix_tensor(stack.codes(k), DType::F64).unwrap()).unwrap())
            .collect();
        let books = FrozenCodebooks::from_tensors(
            projections.iter().map(|v| v.as_tensor().clone()).collect(),
            codes.iter().map(|v| v.as_tensor().clone()).collect(),
        )
        .unwrap();
        let map = LatentMap::new(&basis, DType::F64).unwrap();
        let s = cosine_schedule(12).unwrap();
        let d = toy_denoiser();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (q, y) = &clips[1];
        let x0 = basis.encode_frames(y);
        let h = random_frames(q.frames(), 4, &mut rng);
        let mask = vec![true; q.frames()];
        let batch = SequenceBatch::new(&[&x0], &[&mask], 62.5, DType::F64).unwrap();
        let cond = pad_frames(&[&h], DType::F64).unwrap();
        let draw = NoiseDraw::sample(&s, &[1, q.frames(), 6], &mut rng, DType::F64).unwrap();
        let eps = d.eps_loss(&batch, &cond, &s, &draw, &mut Dropout::eval()).unwrap();
        let y_hat = map.x0_to_latent(&eps.x0_hat(&s, &draw).unwrap()).unwrap();
        let ce = codebook_ce(&y_hat, &[q], &batch.mask, &books).unwrap();
        let grads = ce.backward().unwrap();
        let norm: f64 = d
            .params()
            .vars()
            .iter()
            .filter_map(|v| grads.get(v.as_tensor()))
            .map(|g| tensor_to_vec(g).unwrap().iter().map(|x| x * x).sum::<f64>())
            .sum();
        assert!(norm > 0.0);
        for v in projections.iter().chain(&codes) {
            assert!(grads.get(v.as_tensor()).is_none());
        }
    }

    #[test]
    fn oracle_denoiser_ce_is_minimal_at_small_index() {
        let (stack, basis, clips) = setup();
        let books = FrozenCodebooks::new(&stack, DType::F64).unwrap();
        let map = LatentMap::new(&basis, DType::F64).unwrap();
        let s = cosine_schedule(50).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (q, y) = &clips[2];
        let x0 = basis.encode_frames(y);
        let mask = vec![true; q.frames()];
        let batch = SequenceBatch::new(&[&x0], &[&mask], 62.5, DType::F64).unwrap();
        let mut draw = NoiseDraw::sample(&s, &[1, q.frames(), 6], &mut rng, DType::F64).unwrap();
        draw.steps = vec![1];
        let eps = eps_loss_with(&batch, &s, &draw, |_, _| Ok(draw.eps.clone())).unwrap();
        let y_hat = map.x0_to_latent(&eps.x0_hat(&s, &draw).unwrap()).unwrap();
        let ce = scalar(&codebook_ce(&y_hat, &[q], &batch.mask, &books).unwrap()).unwrap();
        let mut shuffled = q.as_slice().to_vec();
        shuffled.rotate_left(1);
        let other = CodeIndices::from_vec(3, shuffled);
        let worse = scalar(&codebook_ce(&y_hat, &[&other], &batch.mask, &books).unwrap()).unwrap();
        assert!(ce < worse);
    }
}
