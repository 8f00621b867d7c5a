//! Per-frame hand guidance for the sampler.
//!
//! For every frame the arm rotations of the current clean estimate are
//! refined to minimize
//!
//! ```text
//! Σ_hands  ᾱ‖w(θ̃) − w(θ̂)‖² + s·v·(1−ᾱ)‖w(θ̃) − p‖²
//! ```
//!
//! where `w` is the wrist position, `p` the observed wrist and `v` its
//! visibility. Only collar, shoulder, elbow and wrist rotations move. The two
//! hands act on disjoint chains, so each hand is solved on its own with a
//! damped Gauss-Newton (Levenberg-Marquardt) iteration over tangent-space
//! rotation increments `R ← R·exp(δ)`.

use log::warn;
use nalgebra::{SMatrix, SVector, Vector3};
use thiserror::Error;

use crate::geometry::Rotation;
use crate::skeleton::{KinematicTree, MotionSequence, PoseFrame, ShapeParams, ARM_JOINTS, WRIST_JOINTS};

const ARM_DOF: usize = 12;
type ArmVector = SVector<f64, ARM_DOF>;
type ArmJacobian = SMatrix<f64, 3, ARM_DOF>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GuidanceError {
    #[error("guidance solve diverged at frame {frame}")]
    SolverDivergence { frame: usize },
    #[error("{targets} hand targets for {frames} frames")]
    LengthMismatch { frames: usize, targets: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceConfig {
    /// Weight `s` of the constraint term.
    pub scale: f64,
    /// Damped least-squares iterations per call.
    pub iterations: usize,
    /// Starting Marquardt damping.
    pub damping: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            scale: 8.0,
            iterations: 3,
            damping: 1e-3,
        }
    }
}

/// Observed wrist position in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandTarget {
    pub position: Vector3<f64>,
    pub visible: bool,
}

impl HandTarget {
    pub fn hidden() -> Self {
        Self {
            position: Vector3::zeros(),
            visible: false,
        }
    }
}

fn constraint_weight(target: &HandTarget, alpha_bar: f64, scale: f64) -> f64 {
    if target.visible {
        scale * (1.0 - alpha_bar)
    } else {
        0.0
    }
}

/// Guidance objective of one frame for both hands.
pub fn frame_objective(
    tree: &KinematicTree,
    refined: &PoseFrame,
    predicted: &PoseFrame,
    shape: &ShapeParams,
    targets: &[HandTarget; 2],
    alpha_bar: f64,
    scale: f64,
) -> f64 {
    let a = tree.forward_kinematics(refined, shape);
    let b = tree.forward_kinematics(predicted, shape);
    WRIST_JOINTS
        .iter()
        .zip(targets)
        .map(|(&w, target)| {
            let prior = alpha_bar * (a[w] - b[w]).norm_squared();
            let k = constraint_weight(target, alpha_bar, scale);
            let constraint = if k > 0.0 {
                k * (a[w] - target.position).norm_squared()
            } else {
                0.0
            };
            prior + constraint
        })
        .sum()
}

/// Wrist position and its Jacobian w.r.t. right-multiplied tangent
/// increments of the four arm joints of `hand` (3 columns per joint).
fn wrist_jacobian(tree: &KinematicTree, pose: &PoseFrame, shape: &ShapeParams, hand: usize) -> (Vector3<f64>, ArmJacobian) {
    let fk = tree.forward_kinematics_full(pose, shape);
    let wrist = fk.positions[WRIST_JOINTS[hand]];
    let mut jac = ArmJacobian::zeros();
    for (slot, &j) in ARM_JOINTS[hand].iter().enumerate() {
        let lever = wrist - fk.positions[j];
        for axis in 0..3 {
            let omega = fk.rotations[j] * Vector3::ith(axis, 1.0);
            jac.set_column(slot * 3 + axis, &omega.cross(&lever));
        }
    }
    (wrist, jac)
}

fn apply_increment(pose: &PoseFrame, hand: usize, delta: &ArmVector) -> PoseFrame {
    let mut out = pose.clone();
    for (slot, &j) in ARM_JOINTS[hand].iter().enumerate() {
        let d = Vector3::new(delta[slot * 3], delta[slot * 3 + 1], delta[slot * 3 + 2]);
        let r = &mut out.joint_angles[j - 1];
        *r *= Rotation::new(d);
        r.renormalize();
    }
    out
}

/// Analytic gradient of the objective for `hand` w.r.t. its 12 arm
/// increments, evaluated at `refined`.
pub fn hand_gradient(
    tree: &KinematicTree,
    refined: &PoseFrame,
    predicted_wrist: &Vector3<f64>,
    shape: &ShapeParams,
    hand: usize,
    target: &HandTarget,
    alpha_bar: f64,
    scale: f64,
) -> [f64; ARM_DOF] {
    let (wrist, jac) = wrist_jacobian(tree, refined, shape, hand);
    let k = constraint_weight(target, alpha_bar, scale);
    let mut residual = alpha_bar * (wrist - predicted_wrist);
    if k > 0.0 {
        residual += k * (wrist - target.position);
    }
    let g = 2.0 * jac.transpose() * residual;
    let mut out = [0.0; ARM_DOF];
    out.copy_from_slice(g.as_slice());
    out
}

/// Perturbs the arm of `hand` by `delta` (tangent increments), for
/// finite-difference checks.
pub fn perturb_arm(pose: &PoseFrame, hand: usize, delta: &[f64; ARM_DOF]) -> PoseFrame {
    apply_increment(pose, hand, &ArmVector::from_column_slice(delta))
}

fn solve_hand(
    tree: &KinematicTree,
    start: &PoseFrame,
    shape: &ShapeParams,
    hand: usize,
    target: &HandTarget,
    alpha_bar: f64,
    cfg: &GuidanceConfig,
) -> Option<PoseFrame> {
    let k = constraint_weight(target, alpha_bar, cfg.scale);
    if k <= 0.0 {
        // only the prior term remains, which the prediction already minimizes
        return Some(start.clone());
    }
    let anchor = tree.forward_kinematics(start, shape)[WRIST_JOINTS[hand]];
    let cost = |wrist: &Vector3<f64>| {
        alpha_bar * (wrist - anchor).norm_squared() + k * (wrist - target.position).norm_squared()
    };
    let mut pose = start.clone();
    let (mut wrist, mut jac) = wrist_jacobian(tree, &pose, shape, hand);
    let mut current = cost(&wrist);
    let mut damping = cfg.damping;
    for _ in 0..cfg.iterations {
        let residual = alpha_bar * (wrist - anchor) + k * (wrist - target.position);
        let gradient = jac.transpose() * residual;
        let hessian = (alpha_bar + k) * jac.transpose() * jac;
        let mut accepted = false;
        for _ in 0..8 {
            let system = hessian + SMatrix::<f64, ARM_DOF, ARM_DOF>::identity() * damping * (alpha_bar + k);
            let Some(chol) = system.cholesky() else {
                damping *= 10.0;
                continue;
            };
            let delta = -chol.solve(&gradient);
            let candidate = apply_increment(&pose, hand, &delta);
            let w = tree.forward_kinematics(&candidate, shape)[WRIST_JOINTS[hand]];
            let c = cost(&w);
            if !c.is_finite() {
                return None;
            }
            if c <= current {
                pose = candidate;
                current = c;
                damping = (damping * 0.3).max(1e-9);
                accepted = true;
                break;
            }
            damping *= 10.0;
        }
        if !accepted {
            break;
        }
        (wrist, jac) = wrist_jacobian(tree, &pose, shape, hand);
    }
    Some(pose)
}

/// Refines one frame. Non-arm parameters are returned untouched.
pub fn refine_frame(
    tree: &KinematicTree,
    predicted: &PoseFrame,
    shape: &ShapeParams,
    targets: &[HandTarget; 2],
    alpha_bar: f64,
    cfg: &GuidanceConfig,
    frame: usize,
) -> Result<PoseFrame, GuidanceError> {
    let mut pose = predicted.clone();
    for (hand, target) in targets.iter().enumerate() {
        pose = solve_hand(tree, &pose, shape, hand, target, alpha_bar, cfg)
            .ok_or(GuidanceError::SolverDivergence { frame })?;
    }
    Ok(pose)
}

/// Refines every frame independently. A frame whose solve diverges keeps its
/// unrefined pose and is logged.
pub fn guidance_refine(
    tree: &KinematicTree,
    predicted: &MotionSequence,
    targets: &[[HandTarget; 2]],
    alpha_bar: f64,
    cfg: &GuidanceConfig,
) -> Result<MotionSequence, GuidanceError> {
    if targets.len() != predicted.len() {
        return Err(GuidanceError::LengthMismatch {
            frames: predicted.len(),
            targets: targets.len(),
        });
    }
    let frames = predicted
        .frames
        .iter()
        .zip(targets)
        .enumerate()
        .map(|(t, (f, tg))| match refine_frame(tree, f, &predicted.shape, tg, alpha_bar, cfg, t) {
            Ok(p) => p,
            Err(e) => {
                warn!("{e}; keeping the unrefined pose");
                f.clone()
            }
        })
        .collect();
    Ok(MotionSequence {
        shape: predicted.shape,
        frames,
    })
}
