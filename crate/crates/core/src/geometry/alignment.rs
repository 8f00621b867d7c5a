use nalgebra::Vector3;

use super::{CanonicalFrame, GeometryError, RigidTransform};
use crate::skeleton::{joint, CanonicalPose, KinematicTree, MotionSequence, PoseFrame, ShapeParams};

fn check_len(what: &'static str, got: usize, expected: usize) -> Result<(), GeometryError> {
    if got == expected {
        Ok(())
    } else {
        Err(GeometryError::LengthMismatch { what, got, expected })
    }
}

/// Lifts canonical poses back to world motion: the root orientation is the
/// canonical frame rotation times the predicted root-to-canonical rotation,
/// and the root translation is whatever puts the head joint on the observed
/// head position.
pub fn global_alignment(
    tree: &KinematicTree,
    frames: &[CanonicalFrame],
    poses: &[CanonicalPose],
    head_poses: &[RigidTransform],
    shape: &ShapeParams,
) -> Result<MotionSequence, GeometryError> {
    check_len("canonical poses", poses.len(), frames.len())?;
    check_len("head poses", head_poses.len(), frames.len())?;
    let out = frames
        .iter()
        .zip(poses)
        .zip(head_poses)
        .map(|((frame, pose), head)| {
            let mut f = PoseFrame {
                root_translation: Vector3::zeros(),
                root_orientation: frame.rotation() * pose.root_to_cano,
                joint_angles: pose.joint_angles.clone(),
            };
            let local_head = tree.forward_kinematics(&f, shape)[joint::HEAD];
            f.root_translation = head.translation - local_head;
            f
        })
        .collect();
    Ok(MotionSequence {
        shape: *shape,
        frames: out,
    })
}

/// Inverse of the orientation part of [`global_alignment`].
pub fn canonicalize(
    motion: &MotionSequence,
    frames: &[CanonicalFrame],
) -> Result<Vec<CanonicalPose>, GeometryError> {
    check_len("canonical frames", frames.len(), motion.len())?;
    Ok(motion
        .frames
        .iter()
        .zip(frames)
        .map(|(f, c)| CanonicalPose {
            root_to_cano: c.rotation().inverse() * f.root_orientation,
            joint_angles: f.joint_angles.clone(),
        })
        .collect())
}
