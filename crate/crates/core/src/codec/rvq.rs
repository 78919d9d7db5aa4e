use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::frames::Frames;
use crate::{Error, Result};

/// Per-frame code indices, `frames x codebooks`, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CodeIndices {
    codebooks: usize,
    data: Vec<u16>,
}

impl CodeIndices {
    pub fn from_vec(codebooks: usize, data: Vec<u16>) -> Self {
        assert!(codebooks > 0 && data.len() % codebooks == 0);
        Self { codebooks, data }
    }

    pub fn frames(&self) -> usize {
        self.data.len() / self.codebooks.max(1)
    }

    pub fn codebooks(&self) -> usize {
        self.codebooks
    }

    pub fn frame(&self, j: usize) -> &[u16] {
        &self.data[j * self.codebooks..(j + 1) * self.codebooks]
    }

    pub fn as_slice(&self) -> &[u16] {
        &self.data
    }
}

/// Residual codebooks whose entries live in low-rank projection subspaces:
/// `e[k][m] = W_k v[k][m]` with `W_k` a `dim x rank` matrix of orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CodebookStack {
    projections: Vec<DMatrix<f64>>,
    codes: Vec<DMatrix<f64>>,
    /// Derived: `entries[k]` is `entries_per_book x dim`, row-major.
    entries: Vec<Frames>,
}

fn orthonormal_columns(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng));
    g.qr().q()
}

fn entries_of(projection: &DMatrix<f64>, codes: &DMatrix<f64>) -> Frames {
    let e = codes * projection.transpose();
    let (m, d) = e.shape();
    let mut out = Frames::zeros(m, d);
    for i in 0..m {
        for (c, x) in out.row_mut(i).iter_mut().enumerate() {
            *x = e[(i, c)];
        }
    }
    out
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest row; ties go to the lowest index.
fn nearest(entries: &Frames, target: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (m, e) in entries.iter_rows().enumerate() {
        let d = squared_distance(e, target);
        if d < best_d {
            best_d = d;
            best = m;
        }
    }
    best
}

impl CodebookStack {
    pub fn from_parts(projections: Vec<DMatrix<f64>>, codes: Vec<DMatrix<f64>>) -> Result<Self> {
        if projections.is_empty() || projections.len() != codes.len() {
            return Err(Error::Shape("one code table per projection required".into()));
        }
        let dim = projections[0].nrows();
        for (w, v) in projections.iter().zip(&codes) {
            if w.nrows() != dim || w.ncols() != v.ncols() || v.nrows() == 0 {
                return Err(Error::Shape(format!(
                    "projection {:?} incompatible with codes {:?}",
                    w.shape(),
                    v.shape()
                )));
            }
            if v.nrows() > u16::MAX as usize + 1 {
                return Err(Error::Shape("too many entries per codebook".into()));
            }
        }
        let entries = projections
            .iter()
            .zip(&codes)
            .map(|(w, v)| entries_of(w, v))
            .collect();
        Ok(Self {
            projections,
            codes,
            entries,
        })
    }

    /// Gaussian codes in mutually orthogonal random subspaces.
    ///
    /// Entry 0 of every codebook is the zero vector in all constructors, so a
    /// greedy stage can never increase the residual norm.
    pub fn random(dim: usize, codebooks: usize, entries: usize, rank: usize, seed: u64) -> Result<Self> {
        if codebooks * rank > dim {
            return Err(Error::validation("codebooks", "codebooks * rank exceeds latent dim"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = orthonormal_columns(dim, codebooks * rank, &mut rng);
        let projections: Vec<_> = (0..codebooks)
            .map(|k| q.columns(k * rank, rank).into_owned())
            .collect();
        let codes = (0..codebooks)
            .map(|_| {
                let mut v = DMatrix::from_fn(entries, rank, |_, _| StandardNormal.sample(&mut rng));
                v.row_mut(0).fill(0.0);
                v
            })
            .collect();
        Self::from_parts(projections, codes)
    }

    /// Data-fitted stack: projections are consecutive groups of the leading
    /// eigenvectors of the frames' second-moment matrix; codes start from a
    /// seeded Gaussian and are refined by k-means on each stage's projected
    /// residuals.
    pub fn fit(
        frames: &[&Frames],
        codebooks: usize,
        entries: usize,
        rank: usize,
        seed: u64,
        iterations: usize,
    ) -> Result<Self> {
        let dim = frames.first().map(|f| f.dim()).unwrap_or(0);
        if dim == 0 || codebooks * rank > dim {
            return Err(Error::validation("codebooks", "codebooks * rank exceeds latent dim"));
        }
        let total: usize = frames.iter().map(|f| f.rows()).sum();
        if total < entries {
            return Err(Error::Degenerate(format!("{total} frames for {entries} entries")));
        }
        let mut moment = DMatrix::<f64>::zeros(dim, dim);
        for f in frames {
            for row in f.iter_rows() {
                let v = nalgebra::DVector::from_column_slice(row);
                moment.ger(1.0, &v, &v, 1.0);
            }
        }
        let eig = moment.symmetric_eigen();
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let mut directions = DMatrix::<f64>::zeros(dim, codebooks * rank);
        for (c, &src) in order.iter().take(codebooks * rank).enumerate() {
            let mut col = eig.eigenvectors.column(src).into_owned();
            let pivot = col.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
            if pivot < 0.0 {
                col.neg_mut();
            }
            directions.set_column(c, &col);
        }

        // Deterministic subsample for k-means.
        const MAX_KMEANS_FRAMES: usize = 20_000;
        let stride = total.div_ceil(MAX_KMEANS_FRAMES).max(1);
        let mut residual: Vec<Vec<f64>> = frames
            .iter()
            .flat_map(|f| f.iter_rows())
            .step_by(stride)
            .map(|r| r.to_vec())
            .collect();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut projections = Vec::with_capacity(codebooks);
        let mut codes = Vec::with_capacity(codebooks);
        for k in 0..codebooks {
            let w = directions.columns(k * rank, rank).into_owned();
            let points: Vec<Vec<f64>> = residual
                .iter()
                .map(|r| (0..rank).map(|c| w.column(c).iter().zip(r).map(|(a, b)| a * b).sum()).collect())
                .collect();
            let spread: Vec<f64> = (0..rank)
                .map(|c| {
                    let n = points.len() as f64;
                    let mean = points.iter().map(|p| p[c]).sum::<f64>() / n;
                    (points.iter().map(|p| (p[c] - mean).powi(2)).sum::<f64>() / n).sqrt()
                })
                .collect();
            let mut v = DMatrix::from_fn(entries, rank, |_, c| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * spread[c]
            });
            v.row_mut(0).fill(0.0);
            for _ in 0..iterations {
                let table = Frames::from_vec(rank, v.transpose().as_slice().to_vec());
                let mut sums = vec![vec![0.0; rank]; entries];
                let mut counts = vec![0usize; entries];
                for p in &points {
                    let m = nearest(&table, p);
                    counts[m] += 1;
                    for (s, x) in sums[m].iter_mut().zip(p) {
                        *s += x;
                    }
                }
                for m in 1..entries {
                    if counts[m] > 0 {
                        for c in 0..rank {
                            v[(m, c)] = sums[m][c] / counts[m] as f64;
                        }
                    }
                }
            }
            let table = entries_of(&w, &v);
            for r in residual.iter_mut() {
                let m = nearest(&table, r);
                for (x, e) in r.iter_mut().zip(table.row(m)) {
                    *x -= e;
                }
            }
            projections.push(w);
            codes.push(v);
        }
        Self::from_parts(projections, codes)
    }

    pub fn dim(&self) -> usize {
        self.projections[0].nrows()
    }

    pub fn codebooks(&self) -> usize {
        self.projections.len()
    }

    pub fn entries_per_book(&self) -> usize {
        self.codes[0].nrows()
    }

    pub fn projection(&self, k: usize) -> &DMatrix<f64> {
        &self.projections[k]
    }

    pub fn codes(&self, k: usize) -> &DMatrix<f64> {
        &self.codes[k]
    }

    /// Codebook `k` as an `entries x dim` table.
    pub fn entries(&self, k: usize) -> &Frames {
        &self.entries[k]
    }

    pub fn entry(&self, k: usize, m: usize) -> &[f64] {
        self.entries[k].row(m)
    }

    /// Horizontal stack `[W_1 ... W_K]`.
    pub fn projection_stack(&self) -> DMatrix<f64> {
        let cols: usize = self.projections.iter().map(|w| w.ncols()).sum();
        let mut out = DMatrix::zeros(self.dim(), cols);
        let mut at = 0;
        for w in &self.projections {
            out.columns_mut(at, w.ncols()).copy_from(w);
            at += w.ncols();
        }
        out
    }

    /// Greedy residual quantization, one codebook at a time.
    pub fn quantize(&self, u: &Frames) -> Result<(CodeIndices, Frames)> {
        if u.dim() != self.dim() {
            return Err(Error::Shape(format!("latent dim {} vs codec {}", u.dim(), self.dim())));
        }
        let k_books = self.codebooks();
        let mut indices = Vec::with_capacity(u.rows() * k_books);
        let mut residual = vec![0.0; self.dim()];
        for row in u.iter_rows() {
            residual.copy_from_slice(row);
            for k in 0..k_books {
                let m = nearest(&self.entries[k], &residual);
                for (r, e) in residual.iter_mut().zip(self.entry(k, m)) {
                    *r -= e;
                }
                indices.push(m as u16);
            }
        }
        let q = CodeIndices::from_vec(k_books, indices);
        let y = self.lookup(&q)?;
        Ok((q, y))
    }

    /// Summed embeddings `y_j = sum_k e[k][q_jk]`.
    pub fn lookup(&self, q: &CodeIndices) -> Result<Frames> {
        if q.codebooks() != self.codebooks() {
            return Err(Error::Shape(format!("{} codebooks vs {}", q.codebooks(), self.codebooks())));
        }
        let mut y = Frames::zeros(q.frames(), self.dim());
        for j in 0..q.frames() {
            let out = y.row_mut(j);
            for (k, &m) in q.frame(j).iter().enumerate() {
                let m = m as usize;
                if m >= self.entries_per_book() {
                    return Err(Error::validation("code index", format!("{m} out of range")));
                }
                for (o, e) in out.iter_mut().zip(self.entry(k, m)) {
                    *o += e;
                }
            }
        }
        Ok(y)
    }

    /// Little-endian f64 dump of projections then codes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for m in self.projections.iter().chain(&self.codes) {
            for x in m.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], dim: usize, codebooks: usize, entries: usize, rank: usize) -> Result<Self> {
        let expected = 8 * codebooks * (dim * rank + entries * rank);
        if bytes.len() != expected {
            return Err(Error::Shape(format!("codebook blob {} bytes, expected {expected}", bytes.len())));
        }
        let mut values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        let mut take = |r: usize, c: usize| DMatrix::from_iterator(r, c, values.by_ref().take(r * c));
        let projections = (0..codebooks).map(|_| take(dim, rank)).collect();
        let codes = (0..codebooks).map(|_| take(entries, rank)).collect();
        Self::from_parts(projections, codes)
    }
}

/// Numerical rank with tolerance `s_max * max(rows, cols) * eps_f32`.
pub fn numerical_rank(matrix: &DMatrix<f64>) -> (usize, f64) {
    let s = matrix.singular_values();
    let s_max = s.iter().copied().fold(0.0, f64::max);
    let tol = s_max * matrix.nrows().max(matrix.ncols()) as f64 * f32::EPSILON as f64;
    (s.iter().filter(|&&x| x > tol).count(), tol)
}

/// Rank and tolerance of the horizontal projection stack.
pub fn projection_stack_rank(stack: &CodebookStack) -> (usize, f64) {
    numerical_rank(&stack.projection_stack())
}
