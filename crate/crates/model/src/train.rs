//! One optimization step: crop and corrupt a batch, noise the targets,
//! denoise, combine the objectives and update weights and their average.

use candle_core::{DType, Device, Tensor};
use hamos_core::schedule::NoiseSchedule;
use hamos_core::seed::stream_seed;
use hamos_core::skeleton::KinematicTree;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::RunConfig;
use crate::data::{sample_batch, Batch, Corruption, TrainingSequence};
use crate::kinematics::BodyModel;
use crate::losses::{loss_aux, loss_pos, loss_shape, loss_simple, loss_skat, LossReport};
use crate::network::HamosModel;
use crate::optim::{grad_norm, AdamW, Ema};
use crate::ModelError;

pub struct Trainer {
    pub config: RunConfig,
    pub model: HamosModel,
    pub body: BodyModel,
    pub schedule: NoiseSchedule,
    pub(crate) optimizer: AdamW,
    pub(crate) ema: Ema,
    pub(crate) rng: ChaCha8Rng,
    pub(crate) step: u64,
}

/// Differentiable total plus the scalar breakdown.
pub struct StepLosses {
    pub total: Tensor,
    pub report: LossReport,
}

impl Trainer {
    pub fn new(config: RunConfig, dtype: DType, device: &Device) -> Result<Self, ModelError> {
        config.validate()?;
        let model = HamosModel::new(&config.model, stream_seed(config.seed, "init"), dtype, device)?;
        let body = BodyModel::new(KinematicTree::default_tree(), dtype, device)?;
        let optimizer = AdamW::new(model.vars(), config.train.lr, config.train.weight_decay)?;
        let ema = Ema::new(model.vars(), config.train.ema_rate)?;
        Ok(Self {
            schedule: NoiseSchedule::cosine(config.diffusion.steps),
            rng: ChaCha8Rng::seed_from_u64(stream_seed(config.seed, "train")),
            config,
            model,
            body,
            optimizer,
            ema,
            step: 0,
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn ema(&self) -> &Ema {
        &self.ema
    }

    pub fn optimizer(&self) -> &AdamW {
        &self.optimizer
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    /// Learning rate after linear warmup.
    pub fn learning_rate(&self) -> f64 {
        let warm = self.config.train.warmup_steps as f64;
        let ramp = if warm > 0.0 { ((self.step + 1) as f64 / warm).min(1.0) } else { 1.0 };
        self.config.train.lr * ramp
    }

    /// Losses for a batch noised to per-sample `steps` with `noise`
    /// `(B, L, 132)`.
    pub fn losses(&self, batch: &Batch, steps: &[usize], noise: &Tensor) -> Result<StepLosses, ModelError> {
        let dtype = self.model.dtype();
        let dev = self.model.device();
        let ab: Vec<f64> = steps.iter().map(|&n| self.schedule.alpha_bar(n)).collect();
        let b = ab.len();
        let alpha_bar = Tensor::from_vec(ab.clone(), b, dev)?.to_dtype(dtype)?;
        let sa = Tensor::from_vec(ab.iter().map(|a| a.sqrt()).collect::<Vec<_>>(), (b, 1, 1), dev)?.to_dtype(dtype)?;
        let sn = Tensor::from_vec(ab.iter().map(|a| (1.0 - a).sqrt()).collect::<Vec<_>>(), (b, 1, 1), dev)?.to_dtype(dtype)?;
        let noisy = (batch.target.broadcast_mul(&sa)? + noise.broadcast_mul(&sn)?)?;

        let enc = self.model.encode(&batch.raw)?;
        let pred = self.model.denoise(&noisy, steps, &enc)?;
        let simple = loss_simple(&batch.target, &pred)?;
        let shape = loss_shape(&self.body, &batch.shape, &enc.shape)?;
        let offsets = self.body.bone_offsets(&enc.shape.detach())?;
        let joints = self.body.aligned_joints(&pred, &batch.canonical, &batch.head_pos, &offsets)?;
        let pos = loss_pos(&joints, &batch.joints)?;
        let skat = loss_skat(&joints, &batch.contacts)?;
        let w = &self.config.loss;
        let aux = loss_aux(&pos, &skat, &alpha_bar, w)?;
        let total = ((&simple + (&shape * w.shape)?)? + aux)?;
        let scalar = |t: &Tensor| -> Result<f64, ModelError> { Ok(t.to_dtype(DType::F64)?.mean_all()?.to_scalar::<f64>()?) };
        let report = LossReport {
            total: scalar(&total)?,
            simple: scalar(&simple)?,
            shape: scalar(&shape)?,
            pos: scalar(&pos)?,
            skat: scalar(&skat)?,
        };
        Ok(StepLosses { total, report })
    }

    /// Draws a batch, diffusion steps and noise from the trainer's generator
    /// and applies one update. A non-finite loss leaves the weights untouched.
    pub fn train_step(&mut self, data: &[TrainingSequence]) -> Result<LossReport, ModelError> {
        let corruption = Corruption {
            fov: self.config.augment.fov,
            drops: self.config.augment.drops,
        };
        let dtype = self.model.dtype();
        let dev = self.model.device().clone();
        let tc = &self.config.train;
        let batch = sample_batch(data, tc.batch_size, tc.max_len, &corruption, &mut self.rng, dtype, &dev)?;
        let (b, l, f) = batch.target.dims3()?;
        let n_max = self.schedule.steps();
        let steps: Vec<usize> = (0..b).map(|_| self.rng.random_range(1..=n_max)).collect();
        let noise: Vec<f64> = (0..b * l * f).map(|_| self.rng.sample(StandardNormal)).collect();
        let noise = Tensor::from_vec(noise, (b, l, f), &dev)?.to_dtype(dtype)?;

        let out = self.losses(&batch, &steps, &noise)?;
        if !out.report.is_finite() {
            return Err(ModelError::NonFiniteLoss {
                step: self.step,
                report: out.report,
            });
        }
        let grads = out.total.backward()?;
        let norm = grad_norm(self.model.vars(), &grads)?;
        if !norm.is_finite() {
            return Err(ModelError::NonFiniteLoss {
                step: self.step,
                report: out.report,
            });
        }
        let clip = self.config.train.grad_clip;
        let scale = if clip > 0.0 && norm > clip { clip / norm } else { 1.0 };
        let lr = self.learning_rate();
        self.optimizer.apply(self.model.vars(), &grads, scale, lr)?;
        self.ema.update(self.model.vars())?;
        self.step += 1;
        Ok(out.report)
    }

    /// Runs `steps` updates, logging every `log_every`.
    pub fn train(&mut self, data: &[TrainingSequence], steps: usize) -> Result<LossReport, ModelError> {
        let mut last = LossReport::default();
        for _ in 0..steps {
            last = self.train_step(data)?;
            let every = self.config.train.log_every.max(1) as u64;
            if self.step.is_multiple_of(every) {
                log::info!(
                    "step {} loss {:.5} simple {:.5} shape {:.5} pos {:.5} skat {:.5}",
                    self.step,
                    last.total,
                    last.simple,
                    last.shape,
                    last.pos,
                    last.skat
                );
            }
        }
        Ok(last)
    }

    /// Loads the averaged weights into the live model (for sampling).
    pub fn use_ema_weights(&self) -> Result<(), ModelError> {
        Ok(self.model.load_snapshot(self.ema.weights())?)
    }
}
