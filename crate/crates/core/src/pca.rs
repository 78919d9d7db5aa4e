//! PCA coordinates over summed codec latents, fitted on training frames only.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::numerical_rank;
use crate::frames::Frames;
use crate::split::Split;
use crate::{Error, Result};

/// Smallest admissible coefficient standard deviation.
pub const MIN_COEFF_STD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BasisData", into = "BasisData")]
pub struct PcaBasis {
    mean: Vec<f64>,
    /// `D x K`, orthonormal columns.
    directions: DMatrix<f64>,
    singular_values: Vec<f64>,
    /// Per-component share of the total centred variance.
    explained: Vec<f64>,
    coeff_mean: Vec<f64>,
    coeff_std: Vec<f64>,
    frame_count: usize,
    /// Numerical rank of the centred training frames and its tolerance.
    rank: usize,
    rank_tolerance: f64,
    train_hash: String,
}

#[derive(Serialize, Deserialize)]
struct BasisData {
    dim: usize,
    components: usize,
    mean: Vec<f64>,
    /// Column-major.
    directions: Vec<f64>,
    singular_values: Vec<f64>,
    explained: Vec<f64>,
    coeff_mean: Vec<f64>,
    coeff_std: Vec<f64>,
    frame_count: usize,
    rank: usize,
    rank_tolerance: f64,
    train_split_only: bool,
    train_hash: String,
}

impl From<PcaBasis> for BasisData {
    fn from(b: PcaBasis) -> Self {
        Self {
            dim: b.directions.nrows(),
            components: b.directions.ncols(),
            directions: b.directions.as_slice().to_vec(),
            mean: b.mean,
            singular_values: b.singular_values,
            explained: b.explained,
            coeff_mean: b.coeff_mean,
            coeff_std: b.coeff_std,
            frame_count: b.frame_count,
            rank: b.rank,
            rank_tolerance: b.rank_tolerance,
            train_split_only: true,
            train_hash: b.train_hash,
        }
    }
}

impl TryFrom<BasisData> for PcaBasis {
    type Error = Error;

    fn try_from(d: BasisData) -> Result<Self> {
        let k = d.components;
        if !d.train_split_only {
            return Err(Error::Leakage("basis was not fitted on the training split".into()));
        }
        if d.directions.len() != d.dim * k
            || d.mean.len() != d.dim
            || [d.singular_values.len(), d.explained.len(), d.coeff_mean.len(), d.coeff_std.len()]
                .iter()
                .any(|&n| n != k)
        {
            return Err(Error::Shape("inconsistent PCA basis fields".into()));
        }
        if d.coeff_std.iter().any(|&s| !(s >= MIN_COEFF_STD)) {
            return Err(Error::Degenerate("coefficient std below floor".into()));
        }
        Ok(Self {
            directions: DMatrix::from_column_slice(d.dim, k, &d.directions),
            mean: d.mean,
            singular_values: d.singular_values,
            explained: d.explained,
            coeff_mean: d.coeff_mean,
            coeff_std: d.coeff_std,
            frame_count: d.frame_count,
            rank: d.rank,
            rank_tolerance: d.rank_tolerance,
            train_hash: d.train_hash,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaDiagnostics {
    pub frames: usize,
    pub mse: f64,
    pub rmse: f64,
    pub max_abs: f64,
    pub explained_variance: f64,
    pub rank: usize,
    pub rank_tolerance: f64,
    pub components: usize,
}

fn hash_frames(sources: &[(Split, &Frames)]) -> String {
    let mut h = Sha256::new();
    for (_, f) in sources {
        h.update((f.rows() as u64).to_le_bytes());
        for x in f.as_slice() {
            h.update(x.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

impl PcaBasis {
    /// Fit `k` components. Every source must be tagged [`Split::Train`].
    pub fn fit(sources: &[(Split, &Frames)], k: usize) -> Result<Self> {
        if let Some((split, _)) = sources.iter().find(|(s, _)| *s != Split::Train) {
            return Err(Error::Leakage(format!("PCA fit received {split} frames")));
        }
        let dim = sources.first().map_or(0, |(_, f)| f.dim());
        if dim == 0 || sources.iter().any(|(_, f)| f.dim() != dim) {
            return Err(Error::Shape("frames must share a positive dimension".into()));
        }
        if k == 0 || k > dim {
            return Err(Error::validation("pca.components", format!("must be in 1..={dim}")));
        }
        let n: usize = sources.iter().map(|(_, f)| f.rows()).sum();
        if n < k {
            return Err(Error::Degenerate(format!("{n} frames for {k} components")));
        }

        let mut mean = vec![0.0; dim];
        for row in sources.iter().flat_map(|(_, f)| f.iter_rows()) {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);

        let mut gram = DMatrix::<f64>::zeros(dim, dim);
        let mut centred = DVector::<f64>::zeros(dim);
        for row in sources.iter().flat_map(|(_, f)| f.iter_rows()) {
            for (c, (x, m)) in centred.iter_mut().zip(row.iter().zip(&mean)) {
                *c = x - m;
            }
            gram.syger(1.0, &centred, &centred, 1.0);
        }
        gram.fill_upper_triangle_with_lower_triangle();

        let eig = gram.symmetric_eigen();
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
        let total: f64 = eigenvalues.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Degenerate("training frames have zero variance".into()));
        }

        let mut directions = DMatrix::<f64>::zeros(dim, k);
        for (c, &src) in order.iter().take(k).enumerate() {
            let mut col = eig.eigenvectors.column(src).into_owned();
            let pivot = col.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
            if pivot < 0.0 {
                col.neg_mut();
            }
            directions.set_column(c, &col);
        }
        let singular: Vec<f64> = eigenvalues.iter().map(|e| e.sqrt()).collect();
        let tolerance = singular[0] * n.max(dim) as f64 * f32::EPSILON as f64;
        let rank = singular.iter().filter(|&&s| s > tolerance).count();

        let mut basis = Self {
            mean,
            directions,
            singular_values: singular[..k].to_vec(),
            explained: eigenvalues[..k].iter().map(|e| e / total).collect(),
            coeff_mean: vec![0.0; k],
            coeff_std: vec![1.0; k],
            frame_count: n,
            rank,
            rank_tolerance: tolerance,
            train_hash: hash_frames(sources),
        };

        let mut sum = vec![0.0; k];
        let mut sq = vec![0.0; k];
        let coeffs: Vec<Frames> = sources.iter().map(|(_, f)| basis.project_frames(f)).collect();
        for row in coeffs.iter().flat_map(|c| c.iter_rows()) {
            for (s, x) in sum.iter_mut().zip(row) {
                *s += x;
            }
        }
        let coeff_mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        for row in coeffs.iter().flat_map(|c| c.iter_rows()) {
            for ((q, x), m) in sq.iter_mut().zip(row).zip(&coeff_mean) {
                *q += (x - m).powi(2);
            }
        }
        let coeff_std: Vec<f64> = sq.iter().map(|q| (q / n as f64).sqrt()).collect();
        if let Some(i) = coeff_std.iter().position(|&s| !(s >= MIN_COEFF_STD)) {
            return Err(Error::Degenerate(format!(
                "coefficient {i} has std {:.3e}; standardization undefined",
                coeff_std[i]
            )));
        }
        basis.coeff_mean = coeff_mean;
        basis.coeff_std = coeff_std;
        Ok(basis)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn components(&self) -> usize {
        self.directions.ncols()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn directions(&self) -> &DMatrix<f64> {
        &self.directions
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn explained_per_component(&self) -> &[f64] {
        &self.explained
    }

    pub fn explained_variance(&self) -> f64 {
        self.explained.iter().sum::<f64>().min(1.0)
    }

    pub fn coeff_mean(&self) -> &[f64] {
        &self.coeff_mean
    }

    pub fn coeff_std(&self) -> &[f64] {
        &self.coeff_std
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count
    }

    pub fn rank(&self) -> (usize, f64) {
        (self.rank, self.rank_tolerance)
    }

    pub fn train_hash(&self) -> &str {
        &self.train_hash
    }

    pub fn project(&self, y: &[f64]) -> Vec<f64> {
        let k = self.components();
        (0..k)
            .map(|c| {
                self.directions
                    .column(c)
                    .iter()
                    .zip(y.iter().zip(&self.mean))
                    .map(|(u, (y, m))| u * (y - m))
                    .sum()
            })
            .collect()
    }

    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, &zc) in z.iter().enumerate() {
            for (o, u) in out.iter_mut().zip(self.directions.column(c).iter()) {
                *o += u * zc;
            }
        }
        out
    }

    pub fn standardize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.coeff_mean.iter().zip(&self.coeff_std))
            .map(|(z, (m, s))| (z - m) / s)
            .collect()
    }

    pub fn destandardize(&self, zt: &[f64]) -> Vec<f64> {
        zt.iter()
            .zip(self.coeff_mean.iter().zip(&self.coeff_std))
            .map(|(z, (m, s))| z * s + m)
            .collect()
    }

    fn map_rows(frames: &Frames, dim: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> Frames {
        let mut data = Vec::with_capacity(frames.rows() * dim);
        for row in frames.iter_rows() {
            data.extend(f(row));
        }
        if frames.rows() == 0 {
            return Frames::zeros(0, dim);
        }
        Frames::from_vec(dim, data)
    }

    pub fn project_frames(&self, y: &Frames) -> Frames {
        Self::map_rows(y, self.components(), |r| self.project(r))
    }

    pub fn reconstruct_frames(&self, z: &Frames) -> Frames {
        Self::map_rows(z, self.dim(), |r| self.reconstruct(r))
    }

    /// Summed latents to standardized targets `x0`.
    pub fn encode_frames(&self, y: &Frames) -> Frames {
        Self::map_rows(y, self.components(), |r| self.standardize(&self.project(r)))
    }

    /// Standardized coefficients back to full latents.
    pub fn decode_frames(&self, zt: &Frames) -> Frames {
        Self::map_rows(zt, self.dim(), |r| self.reconstruct(&self.destandardize(r)))
    }

    pub fn diagnostics(&self, heldout: &[&Frames]) -> PcaDiagnostics {
        let mut sq = 0.0;
        let mut max_abs = 0.0f64;
        let mut count = 0usize;
        let mut frames = 0usize;
        for f in heldout {
            for row in f.iter_rows() {
                let back = self.reconstruct(&self.project(row));
                for (a, b) in row.iter().zip(&back) {
                    let e = a - b;
                    sq += e * e;
                    max_abs = max_abs.max(e.abs());
                }
                count += row.len();
                frames += 1;
            }
        }
        let mse = if count == 0 { 0.0 } else { sq / count as f64 };
        PcaDiagnostics {
            frames,
            mse,
            rmse: mse.sqrt(),
            max_abs,
            explained_variance: self.explained_variance(),
            rank: self.rank,
            rank_tolerance: self.rank_tolerance,
            components: self.components(),
        }
    }
}

/// Numerical rank of a frame matrix using the stack-rank tolerance rule.
pub fn frame_rank(frames: &Frames) -> (usize, f64) {
    let m = DMatrix::from_row_slice(frames.rows(), frames.dim(), frames.as_slice());
    numerical_rank(&m)
}
