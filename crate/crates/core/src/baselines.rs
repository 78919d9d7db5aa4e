//! Direct PCA regressor, symbolic nearest-neighbour retrieval and the
//! reconstruction-ceiling rows.

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::codec::{Codec, CodeIndices};
use crate::diffusion::{pad_frames, relative_times, SequenceBatch};
use crate::frames::Frames;
use crate::model::{SequenceConfig, SequenceInput, SequenceModel};
use crate::nn::{tensor_from, tensor_to_vec, Dropout, ParamStore};
use crate::pca::PcaBasis;
use crate::split::Split;
use crate::{Error, Result};

/// Smooth-L1: `0.5 e^2 / beta` inside the knee, `|e| - 0.5 beta` outside.
pub fn huber(e: f64, beta: f64) -> f64 {
    let a = e.abs();
    if a < beta {
        0.5 * e * e / beta
    } else {
        a - 0.5 * beta
    }
}

/// Elementwise smooth-L1 averaged over valid frames and all channels.
pub fn masked_huber(pred: &Tensor, target: &Tensor, mask: &Tensor, beta: f64) -> Result<Tensor> {
    let (_, _, k) = target.dims3()?;
    let valid = mask.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if valid <= 0.0 {
        return Err(Error::EmptyMask);
    }
    let a = (pred - target)?.abs()?;
    let inside = a.lt(beta)?.to_dtype(a.dtype())?;
    let quad = (a.sqr()? * (0.5 / beta))?;
    let lin = (&a - 0.5 * beta)?;
    let outside = (1.0 - &inside)?;
    let loss = ((quad * &inside)? + (lin * outside)?)?.broadcast_mul(&mask.unsqueeze(D::Minus1)?)?;
    Ok((loss.sum_all()? / (valid * k as f64))?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorConfig {
    pub target_dim: usize,
    pub cond_dim: usize,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub dropout: f64,
    pub ffn_mult: usize,
    pub huber_beta: f64,
    pub seed: u64,
}

impl RegressorConfig {
    pub fn desk(target_dim: usize, cond_dim: usize) -> Self {
        Self {
            target_dim,
            cond_dim,
            width: 160,
            layers: 3,
            heads: 4,
            dropout: 0.1,
            ffn_mult: 4,
            huber_beta: 0.25,
            seed: 4321,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.huber_beta > 0.0) {
            return Err(Error::validation("regressor.huber_beta", "must be positive"));
        }
        self.sequence().validate()
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

/// Deterministic conditioning-to-trajectory Transformer.
pub struct Regressor {
    config: RegressorConfig,
    model: SequenceModel,
}

impl Regressor {
    pub fn new(config: RegressorConfig, dtype: DType) -> Result<Self> {
        config.validate()?;
        let model = SequenceModel::new(config.sequence(), false, dtype)?;
        Ok(Self { config, model })
    }

    pub fn config(&self) -> &RegressorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        self.model.params()
    }

    pub fn dtype(&self) -> DType {
        self.model.dtype()
    }

    pub fn forward(&self, cond: &Tensor, mask: &Tensor, rel_times: &[f64], dropout: &mut Dropout) -> Result<Tensor> {
        let input = SequenceInput {
            x: None,
            cond,
            mask,
            steps: None,
            rel_times,
        };
        self.model.forward(&input, dropout)
    }

    pub fn loss(&self, batch: &SequenceBatch, cond: &Tensor, dropout: &mut Dropout) -> Result<Tensor> {
        let pred = self.forward(cond, &batch.mask, &batch.rel_times, dropout)?;
        masked_huber(&pred, &batch.x0, &batch.mask, self.config.huber_beta)
    }

    /// `T x K` prediction for one clip.
    pub fn predict(&self, cond: &Frames, mask: &[bool], frame_rate: f64) -> Result<Frames> {
        let t = cond.rows();
        if mask.len() != t {
            return Err(Error::Shape(format!("mask of {} for {t} frames", mask.len())));
        }
        let dtype = self.dtype();
        let c = pad_frames(&[cond], dtype)?;
        let m = tensor_from(mask.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect(), &[1, t], dtype)?;
        let out = self.forward(&c, &m, &relative_times(t, frame_rate), &mut Dropout::eval())?;
        Ok(Frames::from_vec(self.config.target_dim, tensor_to_vec(&out)?))
    }
}

/// Standardized trajectory to audio, shared by every learned system.
pub fn decode_trajectory(x0: &Frames, basis: &PcaBasis, codec: &Codec, samples: usize) -> Result<Vec<f32>> {
    codec.decode(&basis.decode_frames(x0), samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalItem {
    pub id: String,
    pub features: Vec<f64>,
    pub codes: CodeIndices,
}

/// Training-split items with L2-normalized feature rows, sorted by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalIndex {
    items: Vec<RetrievalItem>,
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return v.to_vec();
    }
    v.iter().map(|x| x / norm).collect()
}

/// Retrieved item position and its normalized dot product.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalHit {
    pub position: usize,
    pub score: f64,
}

impl RetrievalIndex {
    pub fn build(items: impl IntoIterator<Item = (Split, RetrievalItem)>) -> Result<Self> {
        let mut out = Vec::new();
        for (split, mut item) in items {
            if split != Split::Train {
                return Err(Error::Leakage(format!("retrieval item {} is from the {split} split", item.id)));
            }
            item.features = normalized(&item.features);
            out.push(item);
        }
        if out.is_empty() {
            return Err(Error::Degenerate("retrieval index is empty".into()));
        }
        let len = out[0].features.len();
        if out.iter().any(|i| i.features.len() != len) {
            return Err(Error::Shape("retrieval features differ in length".into()));
        }
        out.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Self { items: out })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[RetrievalItem] {
        &self.items
    }

    /// Highest normalized dot product; ties go to the lowest id.
    pub fn retrieve(&self, query: &[f64]) -> Result<RetrievalHit> {
        let q = normalized(query);
        if q.len() != self.items[0].features.len() {
            return Err(Error::Shape(format!("query of {} features", q.len())));
        }
        let mut best = RetrievalHit {
            position: 0,
            score: f64::NEG_INFINITY,
        };
        for (position, item) in self.items.iter().enumerate() {
            let score: f64 = item.features.iter().zip(&q).map(|(a, b)| a * b).sum();
            if score > best.score {
                best = RetrievalHit { position, score };
            }
        }
        Ok(best)
    }

    /// Stored codes of the hit, cropped or padded with index 0 (the zero
    /// entry) to `frames`.
    pub fn codes_for(&self, hit: RetrievalHit, frames: usize) -> CodeIndices {
        let codes = &self.items[hit.position].codes;
        let k = codes.codebooks();
        let mut data = vec![0u16; frames * k];
        let keep = frames.min(codes.frames());
        data[..keep * k].copy_from_slice(&codes.as_slice()[..keep * k]);
        CodeIndices::from_vec(k, data)
    }
}

/// Waveforms of the three ceiling/sanity rows for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct CeilingAudio {
    pub target_codec_recon: Vec<f32>,
    pub target_pca_recon: Vec<f32>,
    pub source_code_decode: Vec<f32>,
}

pub fn ceiling_rows(
    y: Option<&Frames>,
    q: Option<&CodeIndices>,
    basis: Option<&PcaBasis>,
    codec: &Codec,
    samples: usize,
) -> Result<CeilingAudio> {
    let y = y.ok_or_else(|| Error::Missing("cached summed latents".into()))?;
    let q = q.ok_or_else(|| Error::Missing("cached code indices".into()))?;
    let basis = basis.ok_or_else(|| Error::Missing("PCA basis".into()))?;
    Ok(CeilingAudio {
        target_codec_recon: codec.decode(y, samples)?,
        target_pca_recon: codec.decode(&basis.reconstruct_frames(&basis.project_frames(y)), samples)?,
        source_code_decode: codec.decode_codes(q, samples)?,
    })
}
