//! Encoder (shape, global and local heads over the conditioning stream) and
//! the diffusion decoder.

use candle_core::{DType, Device, Result, Tensor, Var};
use hamos_core::conditioning::{layout, RAW_FEATURE_DIM};
use hamos_core::skeleton::{POSE_FEATURES, SHAPE_DIM};

use crate::config::ModelConfig;
use crate::layers::{layer_norm, modulate, timestep_features, Attention, AttentionPool, FeedForward, LayerNorm, Linear, Rotary};
use crate::params::ParamStore;

// fill_hidden_hands relies on the two hand slots and flags being adjacent
const _: () = assert!(
    layout::HAND[1] == layout::HAND[0] + layout::HAND_WIDTH
        && layout::VISIBLE[0] == layout::HAND[1] + layout::HAND_WIDTH
        && layout::VISIBLE[1] + 1 == RAW_FEATURE_DIM
);

/// Splits the last dimension into `n` equal chunks.
fn chunks(x: &Tensor, n: usize) -> Result<Vec<Tensor>> {
    let d = x.dim(candle_core::D::Minus1)? / n;
    (0..n).map(|i| x.narrow(candle_core::D::Minus1, i * d, d)).collect()
}

#[derive(Debug, Clone)]
struct TrunkBlock {
    norm1: LayerNorm,
    attn: Attention,
    norm2: LayerNorm,
    ffn: FeedForward,
}

impl TrunkBlock {
    fn new(ps: &mut ParamStore, name: &str, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.dim;
        ps.scoped(name, |ps| {
            Ok(Self {
                norm1: LayerNorm::new(ps, "norm1", d)?,
                attn: Attention::new(ps, "attn", d, cfg.heads, cfg.window)?,
                norm2: LayerNorm::new(ps, "norm2", d)?,
                ffn: FeedForward::new(ps, "ffn", d, d * cfg.ffn_mult)?,
            })
        })
    }

    fn forward(&self, x: &Tensor, rotary: &Rotary) -> Result<Tensor> {
        let h = self.norm1.forward(x)?;
        let x = (x + self.attn.forward(&h, &h, rotary)?)?;
        &x + self.ffn.forward(&self.norm2.forward(&x)?)?
    }
}

/// Windowed block whose norms are modulated by a sequence-level vector, with
/// zero-initialized residual gates.
#[derive(Debug, Clone)]
struct GatedBlock {
    attn: Attention,
    ffn: FeedForward,
    modulation: Linear,
}

impl GatedBlock {
    fn new(ps: &mut ParamStore, name: &str, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.dim;
        ps.scoped(name, |ps| {
            Ok(Self {
                attn: Attention::new(ps, "attn", d, cfg.heads, cfg.window)?,
                ffn: FeedForward::new(ps, "ffn", d, d * cfg.ffn_mult)?,
                modulation: Linear::zeros(ps, "modulation", d, 6 * d)?,
            })
        })
    }

    fn forward(&self, x: &Tensor, cond: &Tensor, rotary: &Rotary) -> Result<Tensor> {
        let m = chunks(&self.modulation.forward(&cond.silu()?)?, 6)?;
        let h = modulate(&layer_norm(x)?, &m[0], &m[1])?;
        let x = (x + self.attn.forward(&h, &h, rotary)?.broadcast_mul(&m[2].unsqueeze(1)?)?)?;
        let h = modulate(&layer_norm(&x)?, &m[3], &m[4])?;
        &x + self.ffn.forward(&h)?.broadcast_mul(&m[5].unsqueeze(1)?)?
    }
}

#[derive(Debug, Clone)]
struct DecoderBlock {
    self_attn: Attention,
    cross_attn: Attention,
    ffn: FeedForward,
    modulation: Linear,
}

impl DecoderBlock {
    fn new(ps: &mut ParamStore, name: &str, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.dim;
        ps.scoped(name, |ps| {
            Ok(Self {
                self_attn: Attention::new(ps, "self_attn", d, cfg.heads, cfg.window)?,
                cross_attn: Attention::new(ps, "cross_attn", d, cfg.heads, cfg.window)?,
                ffn: FeedForward::new(ps, "ffn", d, d * cfg.ffn_mult)?,
                modulation: Linear::zeros(ps, "modulation", d, 6 * d)?,
            })
        })
    }

    fn forward(&self, x: &Tensor, cond: &Tensor, summaries: &Tensor, rotary: &Rotary) -> Result<Tensor> {
        let m = chunks(&self.modulation.forward(&cond.silu()?)?, 6)?;
        let h = modulate(&layer_norm(x)?, &m[0], &m[1])?;
        let x = (x + self.self_attn.forward(&h, &h, rotary)?)?;
        let h = modulate(&layer_norm(&x)?, &m[2], &m[3])?;
        let x = (&x + self.cross_attn.forward(&h, summaries, rotary)?)?;
        let h = modulate(&layer_norm(&x)?, &m[4], &m[5])?;
        &x + self.ffn.forward(&h)?
    }
}

/// Encoder outputs: per-sequence shape `(B, 16)`, global context `(B, D)`
/// and per-frame summaries `(B, T, D)`.
#[derive(Debug, Clone)]
pub struct EncoderOutputs {
    pub shape: Tensor,
    pub global: Tensor,
    pub summaries: Tensor,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    null_hands: Tensor,
    embed_in: Linear,
    embed_out: Linear,
    trunk: Vec<TrunkBlock>,
    trunk_norm: LayerNorm,
    shape_pool: AttentionPool,
    shape_head: Linear,
    global_pool: AttentionPool,
    local: Vec<GatedBlock>,
    local_norm: LayerNorm,
    dim: usize,
    heads: usize,
}

impl Encoder {
    fn new(ps: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.dim;
        ps.scoped("encoder", |ps| {
            Ok(Self {
                null_hands: ps.uniform("null_hands", &[2, layout::HAND_WIDTH], 0.5)?,
                embed_in: Linear::new(ps, "embed_in", RAW_FEATURE_DIM, d)?,
                embed_out: Linear::new(ps, "embed_out", d, d)?,
                trunk: (0..cfg.encoder_layers)
                    .map(|i| TrunkBlock::new(ps, &format!("trunk{i}"), cfg))
                    .collect::<Result<_>>()?,
                trunk_norm: LayerNorm::new(ps, "trunk_norm", d)?,
                shape_pool: AttentionPool::new(ps, "shape_pool", d, cfg.heads)?,
                shape_head: Linear::new(ps, "shape_head", d, SHAPE_DIM)?,
                global_pool: AttentionPool::new(ps, "global_pool", d, cfg.heads)?,
                local: (0..cfg.encoder_layers)
                    .map(|i| GatedBlock::new(ps, &format!("local{i}"), cfg))
                    .collect::<Result<_>>()?,
                local_norm: LayerNorm::new(ps, "local_norm", d)?,
                dim: d,
                heads: cfg.heads,
            })
        })
    }

    /// Substitutes the learned null embedding into hidden hand slots. Hidden
    /// slots are multiplied out, so they pass no gradient to their inputs.
    pub fn fill_hidden_hands(&self, raw: &Tensor) -> Result<Tensor> {
        let (b, t, _) = raw.dims3()?;
        let width = layout::HAND_WIDTH;
        let mut parts = vec![raw.narrow(2, 0, layout::HAND[0])?];
        for h in 0..2 {
            let vis = raw.narrow(2, layout::VISIBLE[h], 1)?;
            let hidden = vis.affine(-1.0, 1.0)?;
            let slot = raw.narrow(2, layout::HAND[h], width)?.broadcast_mul(&vis)?;
            let null = self.null_hands.narrow(0, h, 1)?.reshape((1, 1, width))?.broadcast_as((b, t, width))?;
            parts.push((slot + null.broadcast_mul(&hidden)?)?);
        }
        parts.push(raw.narrow(2, layout::VISIBLE[0], 2)?);
        Tensor::cat(&parts, 2)
    }

    /// Per-frame embedding of the raw conditioning features `(B, T, 42)`.
    pub fn embed(&self, raw: &Tensor) -> Result<Tensor> {
        let x = self.fill_hidden_hands(raw)?;
        self.embed_out.forward(&self.embed_in.forward(&x)?.silu()?)
    }

    pub fn forward(&self, raw: &Tensor) -> Result<EncoderOutputs> {
        let (_, t, _) = raw.dims3()?;
        let rotary = Rotary::new(t, self.dim / self.heads, raw.dtype(), raw.device())?;
        let x = self.embed(raw)?;
        let mut h = x.clone();
        for block in &self.trunk {
            h = block.forward(&h, &rotary)?;
        }
        let h = self.trunk_norm.forward(&h)?;
        let shape = self.shape_head.forward(&self.shape_pool.forward(&h)?)?;
        let global = self.global_pool.forward(&h)?;
        let mut s = x;
        for block in &self.local {
            s = block.forward(&s, &global, &rotary)?;
        }
        Ok(EncoderOutputs {
            shape,
            global,
            summaries: self.local_norm.forward(&s)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Decoder {
    input: Linear,
    time_in: Linear,
    time_out: Linear,
    shape_in: Linear,
    blocks: Vec<DecoderBlock>,
    final_modulation: Linear,
    output: Linear,
    dim: usize,
    heads: usize,
}

impl Decoder {
    fn new(ps: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.dim;
        ps.scoped("decoder", |ps| {
            Ok(Self {
                input: Linear::new(ps, "input", POSE_FEATURES, d)?,
                time_in: Linear::new(ps, "time_in", d, d)?,
                time_out: Linear::new(ps, "time_out", d, d)?,
                shape_in: Linear::new(ps, "shape_in", SHAPE_DIM, d)?,
                blocks: (0..cfg.decoder_layers)
                    .map(|i| DecoderBlock::new(ps, &format!("block{i}"), cfg))
                    .collect::<Result<_>>()?,
                final_modulation: Linear::zeros(ps, "final_modulation", d, 2 * d)?,
                output: Linear::zeros(ps, "output", d, POSE_FEATURES)?,
                dim: d,
                heads: cfg.heads,
            })
        })
    }

    /// Predicts the clean pose features `(B, T, 132)` from noisy ones.
    /// `shape` is used as given; callers detach it from the encoder graph.
    pub fn forward(&self, noisy: &Tensor, steps: &[usize], shape: &Tensor, summaries: &Tensor) -> Result<Tensor> {
        let (_, t, _) = noisy.dims3()?;
        let rotary = Rotary::new(t, self.dim / self.heads, noisy.dtype(), noisy.device())?;
        let temb = timestep_features(steps, self.dim, noisy.dtype(), noisy.device())?;
        let cond = (self.time_out.forward(&self.time_in.forward(&temb)?.silu()?)? + self.shape_in.forward(shape)?)?;
        let mut x = self.input.forward(noisy)?;
        for block in &self.blocks {
            x = block.forward(&x, &cond, summaries, &rotary)?;
        }
        let m = chunks(&self.final_modulation.forward(&cond.silu()?)?, 2)?;
        self.output.forward(&modulate(&layer_norm(&x)?, &m[0], &m[1])?)
    }
}

/// Encoder plus decoder with a flat list of named parameters.
pub struct HamosModel {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub decoder: Decoder,
    vars: Vec<(String, Var)>,
    dtype: DType,
    device: Device,
}

impl HamosModel {
    pub fn new(config: &ModelConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        let mut ps = ParamStore::new(seed, dtype, device.clone());
        let encoder = Encoder::new(&mut ps, config)?;
        let decoder = Decoder::new(&mut ps, config)?;
        Ok(Self {
            config: config.clone(),
            encoder,
            decoder,
            vars: ps.into_vars(),
            dtype,
            device: device.clone(),
        })
    }

    pub fn vars(&self) -> &[(String, Var)] {
        &self.vars
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn num_parameters(&self) -> usize {
        self.vars.iter().map(|(_, v)| v.elem_count()).sum()
    }

    pub fn encode(&self, raw: &Tensor) -> Result<EncoderOutputs> {
        self.encoder.forward(raw)
    }

    /// Denoiser call with the shape estimate cut from the encoder graph.
    pub fn denoise(&self, noisy: &Tensor, steps: &[usize], enc: &EncoderOutputs) -> Result<Tensor> {
        self.decoder.forward(noisy, steps, &enc.shape.detach(), &enc.summaries)
    }

    /// Copies of every parameter value, in registration order.
    pub fn snapshot(&self) -> Result<Vec<Tensor>> {
        self.vars.iter().map(|(_, v)| v.as_tensor().detach().copy()).collect()
    }

    pub fn load_snapshot(&self, values: &[Tensor]) -> Result<()> {
        assert_eq!(values.len(), self.vars.len(), "snapshot size");
        for ((_, var), v) in self.vars.iter().zip(values) {
            var.set(v)?;
        }
        Ok(())
    }
}
