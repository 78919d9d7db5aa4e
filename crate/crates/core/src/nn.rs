//! Small neural building blocks on top of candle tensors.
//!
//! Parameters are created through a [`ParamStore`] from a seeded ChaCha
//! stream; dropout masks also come from caller-owned seeded generators, so
//! every run is reproducible.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{CpuStorage, CustomOp1, DType, Device, Layout, Shape, Tensor, Var, D};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Added to attention scores of masked keys.
const MASKED_SCORE: f64 = -1e9;

pub struct ParamStore {
    dtype: DType,
    rng: ChaCha8Rng,
    entries: Vec<(String, Var)>,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            dtype,
            rng: ChaCha8Rng::seed_from_u64(seed),
            entries: Vec::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    fn push(&mut self, name: &str, values: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if self.entries.iter().any(|(n, _)| n == name) {
            return Err(Error::Shape(format!("duplicate parameter {name}")));
        }
        let t = Tensor::from_vec(values, shape, &Device::Cpu)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.entries.push((name.to_string(), var));
        Ok(out)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        self.push(name, values, shape)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        self.push(name, vec![value; n], shape)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.entries.iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn named(&self) -> &[(String, Var)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn parameter_count(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.elem_count()).sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let map: HashMap<String, Tensor> = self
            .entries
            .iter()
            .map(|(n, v)| (n.clone(), v.as_tensor().clone()))
            .collect();
        candle_core::safetensors::save(&map, path)?;
        Ok(())
    }

    /// Overwrite every parameter with the tensor of the same name in `path`.
    pub fn load(&self, path: &Path) -> Result<()> {
        let map = candle_core::safetensors::load(path, &Device::Cpu)?;
        self.load_map(&map)
    }

    pub fn load_map(&self, map: &HashMap<String, Tensor>) -> Result<()> {
        for (name, var) in &self.entries {
            let t = map
                .get(name)
                .ok_or_else(|| Error::Missing(format!("parameter {name}")))?;
            if t.dims() != var.dims() {
                return Err(Error::Shape(format!("parameter {name}: {:?} vs {:?}", t.dims(), var.dims())));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    /// Copy of all parameter values, keyed by name.
    pub fn snapshot(&self) -> Result<HashMap<String, Tensor>> {
        self.entries
            .iter()
            .map(|(n, v)| Ok((n.clone(), v.as_tensor().copy()?)))
            .collect()
    }
}

/// Seeded inverted dropout. `None` generator means evaluation mode.
pub struct Dropout<'a> {
    p: f64,
    rng: Option<&'a mut ChaCha8Rng>,
}

impl<'a> Dropout<'a> {
    pub fn eval() -> Self {
        Self { p: 0.0, rng: None }
    }

    pub fn train(p: f64, rng: &'a mut ChaCha8Rng) -> Self {
        Self { p, rng: Some(rng) }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn apply(&mut self, x: &Tensor) -> Result<Tensor> {
        let Some(rng) = self.rng.as_deref_mut() else {
            return Ok(x.clone());
        };
        if self.p <= 0.0 {
            return Ok(x.clone());
        }
        let keep = (1.0 / (1.0 - self.p)) as f32;
        let threshold = (self.p * u32::MAX as f64) as u32;
        let mask: Vec<f32> = (0..x.elem_count())
            .map(|_| if rng.next_u32() < threshold { 0.0 } else { keep })
            .collect();
        let mask = Tensor::from_vec(mask, x.dims(), x.device())?.to_dtype(x.dtype())?;
        Ok(x.mul(&mask)?)
    }
}

pub struct Linear {
    /// `(in, out)`.
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize) -> Result<Self> {
        let bound = 1.0 / (input as f64).sqrt();
        Ok(Self {
            weight: store.uniform(&format!("{name}.weight"), &[input, output], bound)?,
            bias: store.uniform(&format!("{name}.bias"), &[output], bound)?,
        })
    }

    pub fn zeros(store: &mut ParamStore, name: &str, input: usize, output: usize) -> Result<Self> {
        Ok(Self {
            weight: store.constant(&format!("{name}.weight"), &[input, output], 0.0)?,
            bias: store.constant(&format!("{name}.bias"), &[output], 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let input = dims[dims.len() - 1];
        let rows = x.elem_count() / input.max(1);
        let y = x.reshape((rows, input))?.matmul(&self.weight)?.broadcast_add(&self.bias)?;
        let mut out = dims;
        *out.last_mut().expect("non-scalar input") = self.weight.dim(1)?;
        Ok(y.reshape(out)?)
    }
}

pub struct LayerNorm {
    gain: Tensor,
    bias: Tensor,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: store.constant(&format!("{name}.gain"), &[dim], 1.0)?,
            bias: store.constant(&format!("{name}.bias"), &[dim], 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let normed = layer_norm(x)?;
        Ok(normed.broadcast_mul(&self.gain)?.broadcast_add(&self.bias)?)
    }
}

/// Normalization over the last axis without affine parameters.
pub fn layer_norm(x: &Tensor) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let centred = x.broadcast_sub(&mean)?;
    let var = centred.sqr()?.mean_keepdim(D::Minus1)?;
    Ok(centred.broadcast_div(&(var + LAYER_NORM_EPS)?.sqrt()?)?)
}

/// Scale rows of the last axis to unit Euclidean norm.
pub fn l2_normalize(x: &Tensor) -> Result<Tensor> {
    let norm = x.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?;
    Ok(x.broadcast_div(&(norm + 1e-12)?)?)
}

struct SoftmaxLastDim;

macro_rules! softmax_rows {
    ($name:ident, $t:ty) => {
        fn $name(src: &[$t], width: usize) -> Vec<$t> {
            let mut dst = vec![0.0; src.len()];
            for (s, d) in src.chunks_exact(width).zip(dst.chunks_exact_mut(width)) {
                let max = s.iter().copied().fold(<$t>::NEG_INFINITY, <$t>::max);
                let mut sum = 0.0;
                for (x, y) in s.iter().zip(d.iter_mut()) {
                    *y = (*x - max).exp();
                    sum += *y;
                }
                for y in d.iter_mut() {
                    *y /= sum;
                }
            }
            dst
        }
    };
}

softmax_rows!(softmax_rows_f32, f32);
softmax_rows!(softmax_rows_f64, f64);

impl CustomOp1 for SoftmaxLastDim {
    fn name(&self) -> &'static str {
        "softmax-last-dim"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (o1, o2) = layout
            .contiguous_offsets()
            .ok_or_else(|| candle_core::Error::Msg("softmax input must be contiguous".into()))?;
        let dims = layout.shape().dims();
        let width = dims[dims.len() - 1];
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(softmax_rows_f32(&v[o1..o2], width)),
            CpuStorage::F64(v) => CpuStorage::F64(softmax_rows_f64(&v[o1..o2], width)),
            _ => return Err(candle_core::Error::Msg("softmax supports f32 and f64".into())),
        };
        Ok((out, layout.shape().clone()))
    }

    fn bwd(&self, _arg: &Tensor, res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let dot = (grad_res * res)?.sum_keepdim(D::Minus1)?;
        Ok(Some(grad_res.broadcast_sub(&dot)?.mul(res)?))
    }
}

/// Softmax over the last axis with a fused forward kernel.
pub fn softmax_last_dim(x: &Tensor) -> Result<Tensor> {
    Ok(x.contiguous()?.apply_op1(SoftmaxLastDim)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((((x * 0.5)?.tanh()? * 0.5)? + 0.5)?)
}

/// `(batch, 1, 1, keys)` additive score bias from a `(batch, keys)` 0/1 mask.
pub fn key_bias(mask: &Tensor) -> Result<Tensor> {
    let (b, k) = mask.dims2()?;
    let bias = ((mask - 1.0)? * -MASKED_SCORE)?;
    Ok(bias.reshape((b, 1, 1, k))?)
}

pub struct Attention {
    heads: usize,
    q: Linear,
    /// Keys and values in one `(W, 2W)` map.
    kv: Linear,
    out: Linear,
}

impl Attention {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, heads: usize) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::validation("heads", "width must be divisible by heads"));
        }
        Ok(Self {
            heads,
            q: Linear::new(store, &format!("{name}.q"), width, width)?,
            kv: Linear::new(store, &format!("{name}.kv"), width, 2 * width)?,
            out: Linear::new(store, &format!("{name}.out"), width, width)?,
        })
    }

    fn split(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, w) = x.dims3()?;
        Ok(x.reshape((b, t, self.heads, w / self.heads))?.transpose(1, 2)?.contiguous()?)
    }

    /// `query (B, Tq, W)` attends over `memory (B, Tk, W)`; `bias` from [`key_bias`].
    pub fn forward(&self, query: &Tensor, memory: &Tensor, bias: &Tensor, dropout: &mut Dropout) -> Result<Tensor> {
        let (b, tq, w) = query.dims3()?;
        let dh = w / self.heads;
        let q = self.split(&self.q.forward(query)?)?;
        let kv = self.kv.forward(memory)?;
        let k = self.split(&kv.narrow(2, 0, w)?)?;
        let v = self.split(&kv.narrow(2, w, w)?)?;
        let scores = (q.matmul(&k.t()?)? * (1.0 / (dh as f64).sqrt()))?.broadcast_add(bias)?;
        let weights = dropout.apply(&softmax_last_dim(&scores)?)?;
        let mixed = weights.matmul(&v)?.transpose(1, 2)?.reshape((b, tq, w))?;
        self.out.forward(&mixed)
    }
}

pub struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            up: Linear::new(store, &format!("{name}.up"), width, hidden)?,
            down: Linear::new(store, &format!("{name}.down"), hidden, width)?,
        })
    }

    pub fn forward(&self, x: &Tensor, dropout: &mut Dropout) -> Result<Tensor> {
        let h = dropout.apply(&self.up.forward(x)?.relu()?)?;
        self.down.forward(&h)
    }
}

/// Channels-first 1-D convolution with symmetric "same" padding.
pub struct Conv1d {
    /// `(out, in, kernel)`.
    kernel: Tensor,
    bias: Tensor,
    dilation: usize,
    padding: usize,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        kernel: usize,
        dilation: usize,
    ) -> Result<Self> {
        let bound = 1.0 / ((input * kernel) as f64).sqrt();
        Ok(Self {
            kernel: store.uniform(&format!("{name}.kernel"), &[output, input, kernel], bound)?,
            bias: store.uniform(&format!("{name}.bias"), &[output], bound)?,
            dilation,
            padding: dilation * (kernel - 1) / 2,
        })
    }

    /// `x (B, C_in, L)` to `(B, C_out, L)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, l) = x.dims3()?;
        let (out, _, k) = self.kernel.dims3()?;
        let x = x.pad_with_zeros(2, self.padding, self.padding)?;
        let taps = (0..k)
            .map(|i| x.narrow(2, i * self.dilation, l))
            .collect::<candle_core::Result<Vec<_>>>()?;
        let cols = Tensor::stack(&taps, 2)?.reshape((b, c * k, l))?;
        let y = self.kernel.reshape((out, c * k))?.broadcast_matmul(&cols)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, out, 1))?)?)
    }
}

/// Single-direction LSTM cell, gates ordered input, forget, cell, output.
pub struct LstmCell {
    hidden: usize,
    input_map: Linear,
    recurrent: Tensor,
}

impl LstmCell {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize) -> Result<Self> {
        let bound = 1.0 / (hidden as f64).sqrt();
        Ok(Self {
            hidden,
            input_map: Linear::new(store, &format!("{name}.input"), input, 4 * hidden)?,
            recurrent: store.uniform(&format!("{name}.recurrent"), &[hidden, 4 * hidden], bound)?,
        })
    }

    /// Run over `steps` (each `(B, input)`) in order and return the last hidden state.
    pub fn run(&self, steps: &[Tensor]) -> Result<Tensor> {
        let first = steps.first().ok_or_else(|| Error::Shape("empty sequence".into()))?;
        let b = first.dim(0)?;
        let zeros = Tensor::zeros((b, self.hidden), first.dtype(), first.device())?;
        let mut h = zeros.clone();
        let mut c = zeros;
        let hd = self.hidden;
        for x in steps {
            let gates = (self.input_map.forward(x)? + h.matmul(&self.recurrent)?)?;
            let i = sigmoid(&gates.narrow(1, 0, hd)?)?;
            let f = sigmoid(&gates.narrow(1, hd, hd)?)?;
            let g = gates.narrow(1, 2 * hd, hd)?.tanh()?;
            let o = sigmoid(&gates.narrow(1, 3 * hd, hd)?)?;
            c = ((f * c)? + (i * g)?)?;
            h = (o * c.tanh()?)?;
        }
        Ok(h)
    }
}

/// Sinusoidal features `[sin(2 pi t / P_i), cos(2 pi t / P_i)]` over a
/// geometric ladder of periods from `min_period` to `max_period`.
pub fn sinusoid_features(values: &[f64], dim: usize, min_period: f64, max_period: f64) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; values.len() * dim];
    for (r, &t) in values.iter().enumerate() {
        for i in 0..half {
            let frac = if half > 1 { i as f64 / (half - 1) as f64 } else { 0.0 };
            let period = min_period * (max_period / min_period).powf(frac);
            let angle = 2.0 * std::f64::consts::PI * t / period;
            out[r * dim + 2 * i] = angle.sin();
            out[r * dim + 2 * i + 1] = angle.cos();
        }
    }
    out
}

pub fn tensor_from(values: Vec<f64>, shape: &[usize], dtype: DType) -> Result<Tensor> {
    Ok(Tensor::from_vec(values, shape, &Device::Cpu)?.to_dtype(dtype)?)
}

pub fn tensor_to_vec(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}
