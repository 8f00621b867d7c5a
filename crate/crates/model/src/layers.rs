//! Transformer building blocks: linear maps, layer norm, rotary position
//! encoding, windowed multi-head attention and learned-query pooling.

use candle_core::{DType, Device, Result, Tensor, D};

use crate::params::ParamStore;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    /// PyTorch-style uniform init with bound `1/sqrt(fan_in)`.
    pub fn new(ps: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        ps.scoped(name, |ps| {
            Ok(Self {
                weight: ps.uniform("weight", &[fan_out, fan_in], bound)?,
                bias: ps.uniform("bias", &[fan_out], bound)?,
            })
        })
    }

    pub fn zeros(ps: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        ps.scoped(name, |ps| {
            Ok(Self {
                weight: ps.zeros("weight", &[fan_out, fan_in])?,
                bias: ps.zeros("bias", &[fan_out])?,
            })
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims();
        let fan_in = dims[dims.len() - 1];
        let rows: usize = dims[..dims.len() - 1].iter().product();
        let y = x.reshape((rows, fan_in))?.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?;
        let mut out = dims.to_vec();
        *out.last_mut().unwrap() = self.weight.dim(0)?;
        y.reshape(out)
    }
}

/// Normalizes the last dimension to zero mean and unit variance.
pub fn layer_norm(x: &Tensor) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    centered.broadcast_div(&(var + LN_EPS)?.sqrt()?)
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gain: Tensor,
    bias: Tensor,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        ps.scoped(name, |ps| {
            Ok(Self {
                gain: ps.constant("gain", &[dim], 1.0)?,
                bias: ps.zeros("bias", &[dim])?,
            })
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        layer_norm(x)?.broadcast_mul(&self.gain)?.broadcast_add(&self.bias)
    }
}

/// `x * (1 + scale) + shift` with per-sequence `(B, D)` modulation.
pub fn modulate(x: &Tensor, shift: &Tensor, scale: &Tensor) -> Result<Tensor> {
    x.broadcast_mul(&(scale.unsqueeze(1)? + 1.0)?)?.broadcast_add(&shift.unsqueeze(1)?)
}

/// Rotary tables for positions `0..len`.
#[derive(Debug, Clone)]
pub struct Rotary {
    cos: Tensor,
    sin: Tensor,
}

impl Rotary {
    pub fn new(len: usize, head_dim: usize, dtype: DType, device: &Device) -> Result<Self> {
        let half = head_dim / 2;
        let mut cos = Vec::with_capacity(len * half);
        let mut sin = Vec::with_capacity(len * half);
        for t in 0..len {
            for i in 0..half {
                let freq = 10_000f64.powf(-(i as f64) / half as f64);
                let a = t as f64 * freq;
                cos.push(a.cos());
                sin.push(a.sin());
            }
        }
        Ok(Self {
            cos: Tensor::from_vec(cos, (len, half), device)?.to_dtype(dtype)?,
            sin: Tensor::from_vec(sin, (len, half), device)?.to_dtype(dtype)?,
        })
    }

    /// Rotates `(B, H, T, hd)` by position, pairing the two halves of the
    /// head dimension.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let (_, _, t, hd) = x.dims4()?;
        let half = hd / 2;
        let cos = self.cos.narrow(0, 0, t)?;
        let sin = self.sin.narrow(0, 0, t)?;
        let a = x.narrow(3, 0, half)?;
        let b = x.narrow(3, half, half)?;
        let ra = (a.broadcast_mul(&cos)? - b.broadcast_mul(&sin)?)?;
        let rb = (a.broadcast_mul(&sin)? + b.broadcast_mul(&cos)?)?;
        Tensor::cat(&[ra, rb], 3)
    }
}

/// Softmax over the last dimension. The row maximum is treated as a
/// constant; `-inf` entries get exactly zero weight.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    e.broadcast_div(&e.sum_keepdim(D::Minus1)?)
}

/// Additive mask for query rows `q0..q0+nq` and key columns `k0..k0+nk`.
fn band_mask(q0: usize, nq: usize, k0: usize, nk: usize, window: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut m = vec![0f64; nq * nk];
    for i in 0..nq {
        for j in 0..nk {
            if (q0 + i).abs_diff(k0 + j) > window {
                m[i * nk + j] = f64::NEG_INFINITY;
            }
        }
    }
    Tensor::from_vec(m, (nq, nk), device)?.to_dtype(dtype)
}

/// Attention of `(B, H, Tq, hd)` queries over same-length keys/values, each
/// query restricted to keys within `window` frames. Queries are processed
/// in blocks so cost grows linearly with length.
pub fn windowed_attention(q: &Tensor, k: &Tensor, v: &Tensor, window: usize) -> Result<Tensor> {
    let (_, _, t, hd) = q.dims4()?;
    let scale = 1.0 / (hd as f64).sqrt();
    let block = window + 1;
    let mut outs = Vec::with_capacity(t.div_ceil(block));
    let mut start = 0;
    while start < t {
        let end = (start + block).min(t);
        let k0 = start.saturating_sub(window);
        let k1 = (end + window).min(t);
        let qb = q.narrow(2, start, end - start)?;
        let kb = k.narrow(2, k0, k1 - k0)?;
        let vb = v.narrow(2, k0, k1 - k0)?;
        let scores = (qb.matmul(&kb.t()?)? * scale)?;
        let mask = band_mask(start, end - start, k0, k1 - k0, window, q.dtype(), q.device())?;
        let attn = softmax_last(&scores.broadcast_add(&mask)?)?;
        outs.push(attn.matmul(&vb)?);
        start = end;
    }
    Tensor::cat(&outs, 2)
}

/// Dense attention weights with the same band mask, for inspection.
pub fn attention_weights(q: &Tensor, k: &Tensor, window: Option<usize>) -> Result<Tensor> {
    let (_, _, t, hd) = q.dims4()?;
    let scores = (q.matmul(&k.t()?)? * (1.0 / (hd as f64).sqrt()))?;
    let scores = match window {
        Some(w) => scores.broadcast_add(&band_mask(0, t, 0, t, w, q.dtype(), q.device())?)?,
        None => scores,
    };
    softmax_last(&scores)
}

fn split_heads(x: &Tensor, heads: usize) -> Result<Tensor> {
    let (b, t, d) = x.dims3()?;
    x.reshape((b, t, heads, d / heads))?.transpose(1, 2)?.contiguous()
}

fn merge_heads(x: &Tensor) -> Result<Tensor> {
    let (b, h, t, hd) = x.dims4()?;
    x.transpose(1, 2)?.contiguous()?.reshape((b, t, h * hd))
}

#[derive(Debug, Clone)]
pub struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    heads: usize,
    window: usize,
}

impl Attention {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize, heads: usize, window: usize) -> Result<Self> {
        ps.scoped(name, |ps| {
            Ok(Self {
                q: Linear::new(ps, "q", dim, dim)?,
                k: Linear::new(ps, "k", dim, dim)?,
                v: Linear::new(ps, "v", dim, dim)?,
                out: Linear::new(ps, "out", dim, dim)?,
                heads,
                window,
            })
        })
    }

    /// Windowed attention from `x` to `context` (same length), with rotary
    /// encoding on queries and keys.
    pub fn forward(&self, x: &Tensor, context: &Tensor, rotary: &Rotary) -> Result<Tensor> {
        let q = rotary.apply(&split_heads(&self.q.forward(x)?, self.heads)?)?;
        let k = rotary.apply(&split_heads(&self.k.forward(context)?, self.heads)?)?;
        let v = split_heads(&self.v.forward(context)?, self.heads)?;
        let o = windowed_attention(&q, &k, &v, self.window)?;
        self.out.forward(&merge_heads(&o)?)
    }

    /// Per-head attention weights over the whole sequence, for tests.
    pub fn weights(&self, x: &Tensor, rotary: &Rotary, window: Option<usize>) -> Result<Tensor> {
        let q = rotary.apply(&split_heads(&self.q.forward(x)?, self.heads)?)?;
        let k = rotary.apply(&split_heads(&self.k.forward(x)?, self.heads)?)?;
        attention_weights(&q, &k, window)
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize, hidden: usize) -> Result<Self> {
        ps.scoped(name, |ps| {
            Ok(Self {
                up: Linear::new(ps, "up", dim, hidden)?,
                down: Linear::new(ps, "down", hidden, dim)?,
            })
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.down.forward(&self.up.forward(x)?.gelu()?)
    }
}

/// Reduces `(B, T, D)` to `(B, D)` with a learned query attending over all
/// frames.
#[derive(Debug, Clone)]
pub struct AttentionPool {
    query: Tensor,
    k: Linear,
    v: Linear,
    out: Linear,
    heads: usize,
}

impl AttentionPool {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize, heads: usize) -> Result<Self> {
        ps.scoped(name, |ps| {
            Ok(Self {
                query: ps.uniform("query", &[1, 1, dim], 1.0 / (dim as f64).sqrt())?,
                k: Linear::new(ps, "k", dim, dim)?,
                v: Linear::new(ps, "v", dim, dim)?,
                out: Linear::new(ps, "out", dim, dim)?,
                heads,
            })
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, _, d) = x.dims3()?;
        let q = split_heads(&self.query.broadcast_as((b, 1, d))?.contiguous()?, self.heads)?;
        let k = split_heads(&self.k.forward(x)?, self.heads)?;
        let v = split_heads(&self.v.forward(x)?, self.heads)?;
        let attn = attention_weights(&q, &k, None)?;
        let pooled = merge_heads(&attn.matmul(&v)?)?;
        self.out.forward(&pooled.squeeze(1)?)
    }
}

/// Sinusoidal features of the diffusion step.
pub fn timestep_features(steps: &[usize], dim: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let half = dim / 2;
    let mut v = Vec::with_capacity(steps.len() * dim);
    for &n in steps {
        for i in 0..half {
            let freq = 10_000f64.powf(-(i as f64) / half as f64);
            v.push((n as f64 * freq).cos());
        }
        for i in 0..half {
            let freq = 10_000f64.powf(-(i as f64) / half as f64);
            v.push((n as f64 * freq).sin());
        }
        v.extend(std::iter::repeat_n(0.0, dim - 2 * half));
    }
    Tensor::from_vec(v, (steps.len(), dim), device)?.to_dtype(dtype)
}
