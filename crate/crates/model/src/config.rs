//! Run configuration. Unknown keys are rejected at every level.

use hamos_core::augmentation::FovPreset;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {field} {reason}")]
    Invalid { field: &'static str, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub dim: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    /// Attention horizon: query `t` sees keys with `|t - t'| <= window`.
    pub window: usize,
    pub ffn_mult: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 256,
            heads: 4,
            encoder_layers: 4,
            decoder_layers: 6,
            window: 63,
            ffn_mult: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    pub steps: usize,
    /// Strided DDIM steps used at sampling time.
    pub sample_steps: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            sample_steps: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub shape: f64,
    pub pos: f64,
    pub skat: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            shape: 2.0,
            pos: 0.25,
            skat: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceSettings {
    pub scale: f64,
    pub iterations: usize,
    pub damping: f64,
}

impl Default for GuidanceSettings {
    fn default() -> Self {
        Self {
            scale: 8.0,
            iterations: 3,
            damping: 1e-3,
        }
    }
}

impl GuidanceSettings {
    pub fn solver(&self) -> hamos_core::guidance::GuidanceConfig {
        hamos_core::guidance::GuidanceConfig {
            scale: self.scale,
            iterations: self.iterations,
            damping: self.damping,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub ema_rate: f64,
    pub batch_size: usize,
    pub max_len: usize,
    pub steps: usize,
    pub warmup_steps: usize,
    pub grad_clip: f64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-4,
            ema_rate: 0.9999,
            batch_size: 32,
            max_len: 512,
            steps: 100_000,
            warmup_steps: 0,
            grad_clip: 1.0,
            log_every: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub fov: FovPreset,
    /// Apply the temporal drop processes on top of the field of view.
    pub drops: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            fov: FovPreset::Random,
            drops: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub diffusion: DiffusionConfig,
    pub loss: LossWeights,
    pub guidance: GuidanceSettings,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub seed: u64,
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let m = &self.model;
        if m.dim == 0 || m.heads == 0 || !m.dim.is_multiple_of(m.heads) {
            return Err(invalid("model.dim", format!("{} must be a positive multiple of heads {}", m.dim, m.heads)));
        }
        if !(m.dim / m.heads).is_multiple_of(2) {
            return Err(invalid("model.heads", "head width must be even for rotary encoding"));
        }
        if m.window == 0 {
            return Err(invalid("model.window", "must be at least 1"));
        }
        if m.encoder_layers == 0 || m.decoder_layers == 0 || m.ffn_mult == 0 {
            return Err(invalid("model", "layer counts and ffn_mult must be positive"));
        }
        let d = &self.diffusion;
        if d.steps == 0 || d.sample_steps == 0 || d.sample_steps > d.steps {
            return Err(invalid("diffusion.sample_steps", format!("{} must be in [1, {}]", d.sample_steps, d.steps)));
        }
        let l = &self.loss;
        for (name, v) in [("loss.shape", l.shape), ("loss.pos", l.pos), ("loss.skat", l.skat), ("guidance.scale", self.guidance.scale)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid("loss", format!("{name} must be non-negative, got {v}")));
            }
        }
        let t = &self.train;
        if !(t.lr > 0.0 && t.lr.is_finite()) || t.weight_decay < 0.0 {
            return Err(invalid("train.lr", "learning rate must be positive and weight decay non-negative"));
        }
        if !(0.0..1.0).contains(&t.ema_rate) {
            return Err(invalid("train.ema_rate", format!("{} must be in [0, 1)", t.ema_rate)));
        }
        if t.batch_size == 0 || t.max_len < 2 {
            return Err(invalid("train.batch_size", "batch size must be positive and max_len at least 2"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}
