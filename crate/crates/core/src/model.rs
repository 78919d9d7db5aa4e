//! Transformer over per-frame sequences, shared by the diffusion denoiser and
//! the direct regressor.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::nn::{key_bias, sinusoid_features, tensor_from, Attention, Dropout, FeedForward, LayerNorm, Linear, ParamStore};
use crate::{Error, Result};

/// Shortest and longest period of the positional ladder, seconds.
pub const POSITION_PERIODS: (f64, f64) = (0.02, 20.0);
const TIMESTEP_PERIODS: (f64, f64) = (1.0, 10_000.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceConfig {
    pub target_dim: usize,
    pub cond_dim: usize,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub dropout: f64,
    pub ffn_mult: usize,
    pub seed: u64,
}

impl SequenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            return Err(Error::validation("model.heads", "width must be a positive multiple of heads"));
        }
        if self.width % 2 != 0 {
            return Err(Error::validation("model.width", "must be even"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::validation("model.dropout", "must be in [0, 1)"));
        }
        if self.target_dim == 0 || self.cond_dim == 0 || self.layers == 0 {
            return Err(Error::validation("model", "dimensions and layer count must be positive"));
        }
        Ok(())
    }
}

struct Block {
    timestep: Option<Linear>,
    norm_self: LayerNorm,
    self_attention: Attention,
    norm_cross: LayerNorm,
    cross_attention: Attention,
    norm_ffn: LayerNorm,
    ffn: FeedForward,
}

/// Inputs of one forward pass. `rel_times` are frame-centre times in seconds
/// from the window start, shared across the batch.
pub struct SequenceInput<'a> {
    /// `(B, T, K)` noised trajectory, absent for the regressor.
    pub x: Option<&'a Tensor>,
    /// `(B, T, cond_dim)`.
    pub cond: &'a Tensor,
    /// `(B, T)` with 1 for valid frames.
    pub mask: &'a Tensor,
    /// Diffusion index per batch element.
    pub steps: Option<&'a [usize]>,
    pub rel_times: &'a [f64],
}

pub struct SequenceModel {
    config: SequenceConfig,
    store: ParamStore,
    input: Option<Linear>,
    cond: Linear,
    timestep: Option<(Linear, Linear)>,
    blocks: Vec<Block>,
    norm_out: LayerNorm,
    head: Linear,
}

impl SequenceModel {
    /// `with_input` adds the noised-trajectory input and timestep pathway.
    pub fn new(config: SequenceConfig, with_input: bool, dtype: DType) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(config.seed, dtype);
        let w = config.width;
        let input = if with_input {
            Some(Linear::new(&mut store, "input", config.target_dim, w)?)
        } else {
            None
        };
        let cond = Linear::new(&mut store, "cond", config.cond_dim, w)?;
        let timestep = if with_input {
            Some((
                Linear::new(&mut store, "timestep.0", w, w)?,
                Linear::new(&mut store, "timestep.1", w, w)?,
            ))
        } else {
            None
        };
        let mut blocks = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = format!("block{l}");
            blocks.push(Block {
                timestep: if with_input {
                    Some(Linear::new(&mut store, &format!("{p}.timestep"), w, w)?)
                } else {
                    None
                },
                norm_self: LayerNorm::new(&mut store, &format!("{p}.norm_self"), w)?,
                self_attention: Attention::new(&mut store, &format!("{p}.self"), w, config.heads)?,
                norm_cross: LayerNorm::new(&mut store, &format!("{p}.norm_cross"), w)?,
                cross_attention: Attention::new(&mut store, &format!("{p}.cross"), w, config.heads)?,
                norm_ffn: LayerNorm::new(&mut store, &format!("{p}.norm_ffn"), w)?,
                ffn: FeedForward::new(&mut store, &format!("{p}.ffn"), w, config.ffn_mult * w)?,
            });
        }
        let norm_out = LayerNorm::new(&mut store, "norm_out", w)?;
        let head = Linear::new(&mut store, "head", w, config.target_dim)?;
        Ok(Self {
            config,
            store,
            input,
            cond,
            timestep,
            blocks,
            norm_out,
            head,
        })
    }

    pub fn config(&self) -> &SequenceConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    /// `(B, T, K)` output.
    pub fn forward(&self, input: &SequenceInput, dropout: &mut Dropout) -> Result<Tensor> {
        let (b, t, c) = input.cond.dims3()?;
        if c != self.config.cond_dim || input.rel_times.len() != t || input.mask.dims() != [b, t] {
            return Err(Error::Shape(format!(
                "conditioning {:?}, mask {:?}, {} times",
                input.cond.dims(),
                input.mask.dims(),
                input.rel_times.len()
            )));
        }
        let w = self.config.width;
        let dtype = self.dtype();
        let (lo, hi) = POSITION_PERIODS;
        let pe = tensor_from(sinusoid_features(input.rel_times, w, lo, hi), &[1, t, w], dtype)?;
        let memory = self.cond.forward(input.cond)?.broadcast_add(&pe)?;
        let mut z = memory.clone();
        if let Some(proj) = &self.input {
            let x = input.x.ok_or_else(|| Error::Shape("denoiser requires a noised input".into()))?;
            if x.dims() != [b, t, self.config.target_dim] {
                return Err(Error::Shape(format!("trajectory {:?}", x.dims())));
            }
            z = (z + proj.forward(x)?.broadcast_add(&pe)?)?;
        }
        let temb = match (&self.timestep, input.steps) {
            (Some((l0, l1)), Some(steps)) => {
                if steps.len() != b {
                    return Err(Error::Shape("one diffusion index per batch element".into()));
                }
                let values: Vec<f64> = steps.iter().map(|&n| n as f64).collect();
                let (lo, hi) = TIMESTEP_PERIODS;
                let s = tensor_from(sinusoid_features(&values, w, lo, hi), &[b, w], dtype)?;
                Some(l1.forward(&candle_nn::ops::silu(&l0.forward(&s)?)?)?)
            }
            (None, _) => None,
            (Some(_), None) => return Err(Error::Shape("denoiser requires diffusion indices".into())),
        };
        let bias = key_bias(input.mask)?;
        for block in &self.blocks {
            if let (Some(proj), Some(temb)) = (&block.timestep, &temb) {
                z = z.broadcast_add(&proj.forward(temb)?.unsqueeze(1)?)?;
            }
            let n = block.norm_self.forward(&z)?;
            let a = block.self_attention.forward(&n, &n, &bias, dropout)?;
            z = (z + dropout.apply(&a)?)?;
            let n = block.norm_cross.forward(&z)?;
            let a = block.cross_attention.forward(&n, &memory, &bias, dropout)?;
            z = (z + dropout.apply(&a)?)?;
            let n = block.norm_ffn.forward(&z)?;
            let f = block.ffn.forward(&n, dropout)?;
            z = (z + dropout.apply(&f)?)?;
        }
        self.head.forward(&self.norm_out.forward(&z)?)
    }
}
