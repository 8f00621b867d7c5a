//! Binary checkpoints: magic, format version, a JSON header with the run
//! configuration and its hash, then raw little-endian tensor data for the
//! weights, their average and the optimizer moments.

use std::io::{Read, Write};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::network::HamosModel;
use crate::train::Trainer;
use crate::ModelError;

pub const MAGIC: &[u8; 8] = b"HAMOSCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    group: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: RunConfig,
    config_hash: String,
    dtype: String,
    step: u64,
    adam_step: u64,
    ema_updates: u64,
    rng_seed: Vec<u8>,
    rng_word_pos: String,
    tensors: Vec<TensorEntry>,
}

/// Everything needed to resume training or sample.
pub struct Checkpoint {
    pub config: RunConfig,
    pub dtype: DType,
    pub step: u64,
    pub adam_step: u64,
    pub ema_updates: u64,
    pub rng_seed: [u8; 32],
    pub rng_word_pos: u128,
    pub names: Vec<String>,
    pub weights: Vec<Tensor>,
    pub ema: Vec<Tensor>,
    pub adam_m: Vec<Tensor>,
    pub adam_v: Vec<Tensor>,
}

fn err(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn dtype_name(d: DType) -> Result<&'static str, ModelError> {
    match d {
        DType::F32 => Ok("f32"),
        DType::F64 => Ok("f64"),
        other => Err(err(format!("unsupported dtype {other:?}"))),
    }
}

fn tensor_bytes(t: &Tensor, out: &mut Vec<u8>) -> Result<(), ModelError> {
    let flat = t.flatten_all()?;
    match t.dtype() {
        DType::F32 => flat.to_vec1::<f32>()?.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        DType::F64 => flat.to_vec1::<f64>()?.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        other => return Err(err(format!("unsupported dtype {other:?}"))),
    }
    Ok(())
}

impl Checkpoint {
    pub fn from_trainer(trainer: &Trainer) -> Result<Self, ModelError> {
        let vars = trainer.model.vars();
        let (m, v) = trainer.optimizer().state();
        Ok(Self {
            config: trainer.config.clone(),
            dtype: trainer.model.dtype(),
            step: trainer.step(),
            adam_step: trainer.optimizer().step_count(),
            ema_updates: trainer.ema().updates(),
            rng_seed: trainer.rng().get_seed(),
            rng_word_pos: trainer.rng().get_word_pos(),
            names: vars.iter().map(|(n, _)| n.clone()).collect(),
            weights: trainer.model.snapshot()?,
            ema: trainer.ema().weights().to_vec(),
            adam_m: m.to_vec(),
            adam_v: v.to_vec(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut tensors = Vec::new();
        let mut data = Vec::new();
        for (group, list) in [("weights", &self.weights), ("ema", &self.ema), ("adam_m", &self.adam_m), ("adam_v", &self.adam_v)] {
            for (name, t) in self.names.iter().zip(list.iter()) {
                tensors.push(TensorEntry {
                    name: name.clone(),
                    group: group.to_string(),
                    shape: t.dims().to_vec(),
                });
                tensor_bytes(&t.to_dtype(self.dtype)?, &mut data)?;
            }
        }
        let header = Header {
            config: self.config.clone(),
            config_hash: self.config.hash(),
            dtype: dtype_name(self.dtype)?.to_string(),
            step: self.step,
            adam_step: self.adam_step,
            ema_updates: self.ema_updates,
            rng_seed: self.rng_seed.to_vec(),
            rng_word_pos: self.rng_word_pos.to_string(),
            tensors,
        };
        let json = serde_json::to_vec(&header).map_err(|e| err(e.to_string()))?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io(path))?);
        f.write_all(MAGIC).map_err(io(path))?;
        f.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io(path))?;
        f.write_all(&(json.len() as u64).to_le_bytes()).map_err(io(path))?;
        f.write_all(&json).map_err(io(path))?;
        f.write_all(&data).map_err(io(path))?;
        f.flush().map_err(io(path))
    }

    pub fn load(path: &Path, device: &Device) -> Result<Self, ModelError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path).map_err(io(path))?.read_to_end(&mut bytes).map_err(io(path))?;
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(err("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(err(format!("unsupported format version {version}")));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..20 + len).ok_or_else(|| err("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| err(e.to_string()))?;
        if header.config.hash() != header.config_hash {
            return Err(err("configuration hash mismatch"));
        }
        header.config.validate()?;
        let (dtype, width) = match header.dtype.as_str() {
            "f32" => (DType::F32, 4),
            "f64" => (DType::F64, 8),
            other => return Err(err(format!("unsupported dtype {other}"))),
        };
        let rng_seed: [u8; 32] = header.rng_seed.as_slice().try_into().map_err(|_| err("bad generator seed"))?;
        let rng_word_pos: u128 = header.rng_word_pos.parse().map_err(|_| err("bad generator position"))?;

        let mut offset = 20 + len;
        let mut groups: [Vec<Tensor>; 4] = Default::default();
        let mut names = Vec::new();
        for entry in &header.tensors {
            let count: usize = entry.shape.iter().product();
            let raw = bytes.get(offset..offset + count * width).ok_or_else(|| err(format!("truncated tensor {}", entry.name)))?;
            offset += count * width;
            let t = match dtype {
                DType::F32 => Tensor::from_vec(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect::<Vec<_>>(), entry.shape.as_slice(), device)?,
                _ => Tensor::from_vec(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect::<Vec<_>>(), entry.shape.as_slice(), device)?,
            };
            let g = match entry.group.as_str() {
                "weights" => {
                    names.push(entry.name.clone());
                    0
                }
                "ema" => 1,
                "adam_m" => 2,
                "adam_v" => 3,
                other => return Err(err(format!("unknown tensor group {other}"))),
            };
            groups[g].push(t);
        }
        if offset != bytes.len() {
            return Err(err("trailing bytes after tensor data"));
        }
        if groups.iter().any(|g| g.len() != names.len()) {
            return Err(err("tensor groups have different sizes"));
        }
        let [weights, ema, adam_m, adam_v] = groups;
        Ok(Self {
            config: header.config,
            dtype,
            step: header.step,
            adam_step: header.adam_step,
            ema_updates: header.ema_updates,
            rng_seed,
            rng_word_pos,
            names,
            weights,
            ema,
            adam_m,
            adam_v,
        })
    }

    fn check_names(&self, model: &HamosModel) -> Result<(), ModelError> {
        let expected: Vec<&str> = model.vars().iter().map(|(n, _)| n.as_str()).collect();
        let got: Vec<&str> = self.names.iter().map(|n| n.as_str()).collect();
        if expected != got {
            return Err(err("parameter layout does not match the configuration"));
        }
        for ((_, v), t) in model.vars().iter().zip(&self.weights) {
            if v.dims() != t.dims() {
                return Err(err("parameter shapes do not match the configuration"));
            }
        }
        Ok(())
    }

    /// Model with the averaged weights, ready for sampling.
    pub fn sampling_model(&self, device: &Device) -> Result<HamosModel, ModelError> {
        let model = HamosModel::new(&self.config.model, 0, self.dtype, device)?;
        self.check_names(&model)?;
        model.load_snapshot(&self.ema)?;
        Ok(model)
    }

    /// Trainer restored to the saved step, weights, moments and generator.
    pub fn into_trainer(self, device: &Device) -> Result<Trainer, ModelError> {
        let mut trainer = Trainer::new(self.config.clone(), self.dtype, device)?;
        self.check_names(&trainer.model)?;
        trainer.model.load_snapshot(&self.weights)?;
        trainer.optimizer.restore(self.adam_step, self.adam_m, self.adam_v);
        trainer.ema.restore(self.ema_updates, self.ema);
        let mut rng = ChaCha8Rng::from_seed(self.rng_seed);
        rng.set_word_pos(self.rng_word_pos);
        trainer.rng = rng;
        trainer.step = self.step;
        Ok(trainer)
    }
}
