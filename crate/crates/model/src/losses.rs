//! Training objectives: denoising, shape, joint position and foot skating.

use candle_core::{Tensor, D};
use hamos_core::skeleton::FOOT_JOINTS;

use crate::config::LossWeights;
use crate::kinematics::BodyModel;
use crate::ModelError;

fn same_dims(a: &Tensor, b: &Tensor) -> Result<(), ModelError> {
    if a.dims() == b.dims() {
        Ok(())
    } else {
        Err(ModelError::ShapeMismatch {
            left: a.dims().to_vec(),
            right: b.dims().to_vec(),
        })
    }
}

/// Mean squared error over every feature of every frame.
pub fn loss_simple(target: &Tensor, pred: &Tensor) -> Result<Tensor, ModelError> {
    same_dims(target, pred)?;
    Ok((target - pred)?.sqr()?.mean_all()?)
}

/// Squared rest-pose joint error, summed over axes and averaged over joints
/// and batch. Both shapes are clamped to the valid box first.
pub fn loss_shape(body: &BodyModel, shape: &Tensor, predicted: &Tensor) -> Result<Tensor, ModelError> {
    same_dims(shape, predicted)?;
    let d = (body.tpose_joints(shape)? - body.tpose_joints(predicted)?)?;
    Ok(d.sqr()?.sum(D::Minus1)?.mean_all()?)
}

/// Per-sequence mean squared joint distance, `(B,)`, from `(B, T, J, 3)`.
pub fn loss_pos(pred_joints: &Tensor, gt_joints: &Tensor) -> Result<Tensor, ModelError> {
    same_dims(pred_joints, gt_joints)?;
    Ok((pred_joints - gt_joints)?.sqr()?.sum(D::Minus1)?.mean(2)?.mean(1)?)
}

/// Per-sequence contact-masked squared foot displacement between
/// consecutive frames, averaged over the `T - 1` pairs, `(B,)`. `contacts`
/// is `(B, T, 2)` for the left and right foot.
pub fn loss_skat(pred_joints: &Tensor, contacts: &Tensor) -> Result<Tensor, ModelError> {
    let (b, t, _, _) = pred_joints.dims4()?;
    let (cb, ct, cf) = contacts.dims3()?;
    if (cb, ct, cf) != (b, t, 2) {
        return Err(ModelError::LengthMismatch {
            what: "contacts",
            got: ct,
            expected: t,
        });
    }
    if t < 2 {
        return Ok(Tensor::zeros(b, pred_joints.dtype(), pred_joints.device())?);
    }
    let feet = Tensor::cat(
        &[
            pred_joints.narrow(2, FOOT_JOINTS[0], 1)?,
            pred_joints.narrow(2, FOOT_JOINTS[1], 1)?,
        ],
        2,
    )?;
    let step = (feet.narrow(1, 1, t - 1)? - feet.narrow(1, 0, t - 1)?)?;
    let masked = step.sqr()?.sum(D::Minus1)?.mul(&contacts.narrow(1, 0, t - 1)?)?;
    Ok((masked.sum(2)?.sum(1)? / (t - 1) as f64)?)
}

/// Per-sequence `ᾱ·(λ_pos·L_pos + λ_skat·L_skat)`, averaged over the batch.
pub fn loss_aux(pos: &Tensor, skat: &Tensor, alpha_bar: &Tensor, weights: &LossWeights) -> Result<Tensor, ModelError> {
    let per = ((pos * weights.pos)? + (skat * weights.skat)?)?;
    Ok(per.mul(alpha_bar)?.mean_all()?)
}

/// Scalar losses of one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub simple: f64,
    pub shape: f64,
    pub pos: f64,
    pub skat: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.total, self.simple, self.shape, self.pos, self.skat].iter().all(|v| v.is_finite())
    }
}
