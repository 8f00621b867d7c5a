//! Deterministic strided sampling with optional hand guidance between
//! denoising steps.

use std::time::Instant;

use candle_core::{DType, Tensor};
use hamos_core::conditioning::HandObservation;
use hamos_core::geometry::{canonical_frames, canonicalize, global_alignment, CanonicalFrame, RigidTransform};
use hamos_core::guidance::{guidance_refine, GuidanceConfig, HandTarget};
use hamos_core::schedule::NoiseSchedule;
use hamos_core::skeleton::{CanonicalPose, KinematicTree, MotionSequence, ShapeParams, POSE_FEATURES, SHAPE_DIM};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::observation_features;
use crate::network::HamosModel;
use crate::ModelError;

/// Observed head poses and hand observations over frames `0..=T`.
#[derive(Debug, Clone)]
pub struct Observations {
    pub head: Vec<RigidTransform>,
    pub hands: Vec<[HandObservation; 2]>,
}

impl Observations {
    pub fn frames(&self) -> usize {
        self.head.len().saturating_sub(1)
    }

    /// World wrist targets for frames `1..=T`.
    pub fn hand_targets(&self) -> Vec<[HandTarget; 2]> {
        (1..self.head.len())
            .map(|t| {
                self.hands[t].map(|o| {
                    if o.visible {
                        HandTarget {
                            position: self.head[t].transform_point(&o.pose.translation),
                            visible: true,
                        }
                    } else {
                        HandTarget::hidden()
                    }
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SampleOptions {
    /// Number of strided denoising steps.
    pub steps: usize,
    pub guidance: Option<GuidanceConfig>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub motion: MotionSequence,
    pub shape: ShapeParams,
    /// Wall-clock seconds.
    pub runtime: f64,
}

fn features_to_poses(x: &[f64]) -> Vec<CanonicalPose> {
    x.chunks(POSE_FEATURES).map(CanonicalPose::from_features).collect()
}

fn lift(tree: &KinematicTree, frames: &[CanonicalFrame], head: &[RigidTransform], x: &[f64], shape: &ShapeParams) -> Result<MotionSequence, ModelError> {
    Ok(global_alignment(tree, frames, &features_to_poses(x), head, shape)?)
}

/// Samples one motion for the observations.
pub fn sample_motion(
    model: &HamosModel,
    schedule: &NoiseSchedule,
    tree: &KinematicTree,
    obs: &Observations,
    opts: &SampleOptions,
) -> Result<SampleOutput, ModelError> {
    let started = Instant::now();
    let frames = obs.frames();
    if obs.hands.len() != obs.head.len() {
        return Err(ModelError::LengthMismatch {
            what: "hand observations",
            got: obs.hands.len(),
            expected: obs.head.len(),
        });
    }
    let dtype = model.dtype();
    let dev = model.device();
    let raw: Vec<f64> = observation_features(&obs.head, &obs.hands)?.iter().flatten().copied().collect();
    let raw = Tensor::from_vec(raw, (1, frames, hamos_core::conditioning::RAW_FEATURE_DIM), dev)?.to_dtype(dtype)?;
    let enc = model.encode(&raw)?;
    let shape_vals = enc.shape.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    debug_assert_eq!(shape_vals.len(), SHAPE_DIM);
    let shape = ShapeParams::from_slice(&shape_vals);

    let cano = canonical_frames(&obs.head)?;
    let cano = &cano[1..];
    let head = &obs.head[1..];
    let targets = obs.hand_targets();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x: Vec<f64> = (0..frames * POSE_FEATURES).map(|_| rng.sample(StandardNormal)).collect();
    let steps = schedule.ddim_timesteps(opts.steps)?;
    for (i, &n) in steps.iter().enumerate() {
        let prev = steps.get(i + 1).copied().unwrap_or(0);
        let xt = Tensor::from_vec(x.clone(), (1, frames, POSE_FEATURES), dev)?.to_dtype(dtype)?;
        let pred = model.denoise(&xt, &[n], &enc)?;
        let mut x0 = pred.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        if let Some(g) = &opts.guidance {
            let motion = lift(tree, cano, head, &x0, &shape)?;
            let refined = guidance_refine(tree, &motion, &targets, schedule.alpha_bar(n), g)?;
            x0 = canonicalize(&refined, cano)?.iter().flat_map(|p| p.to_features()).collect();
        }
        x = schedule.ddim_step(&x, &x0, n, prev);
    }
    let motion = lift(tree, cano, head, &x, &shape)?;
    Ok(SampleOutput {
        motion,
        shape,
        runtime: started.elapsed().as_secs_f64(),
    })
}
