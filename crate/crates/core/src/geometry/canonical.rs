use nalgebra::{Matrix3, Vector3};

use super::{GeometryError, RigidTransform, Rotation, HEAD_FORWARD, WORLD_UP};

/// Horizontal forward projections shorter than this are treated as
/// gravity-parallel (≈ 1e-6 rad away from ±z).
const MIN_HORIZONTAL_FORWARD: f64 = 1e-6;

/// Gravity-aligned frame on the floor under the head, y pointing along the
/// head's horizontal heading. Stores the canonical→world transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanonicalFrame {
    pub transform: RigidTransform,
}

impl CanonicalFrame {
    fn from_heading(position: &Vector3<f64>, heading: &Vector3<f64>) -> Self {
        let y = *heading;
        let z = WORLD_UP;
        let x = y.cross(&z);
        let rotation = Rotation::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]));
        Self {
            transform: RigidTransform::new(rotation, Vector3::new(position.x, position.y, 0.0)),
        }
    }

    pub fn rotation(&self) -> &Rotation {
        &self.transform.rotation
    }

    /// Unit horizontal heading (the frame's y axis in world coordinates).
    pub fn heading(&self) -> Vector3<f64> {
        self.transform.rotation * Vector3::y()
    }
}

fn horizontal_heading(head_pose: &RigidTransform) -> Option<Vector3<f64>> {
    let forward = head_pose.rotation * HEAD_FORWARD;
    let horizontal = Vector3::new(forward.x, forward.y, 0.0);
    let n = horizontal.norm();
    (n > MIN_HORIZONTAL_FORWARD).then(|| horizontal / n)
}

/// Canonical frame of a single head pose. Fails when the head looks straight
/// up or down; use [`canonical_frames`] to fall back to the previous heading.
pub fn canonical_frame(head_pose: &RigidTransform) -> Result<CanonicalFrame, GeometryError> {
    horizontal_heading(head_pose)
        .map(|h| CanonicalFrame::from_heading(&head_pose.translation, &h))
        .ok_or(GeometryError::DegenerateHeading { frame: 0 })
}

/// Canonical frames for a head trajectory. A gravity-parallel forward axis
/// reuses the previous frame's heading; only the first frame can fail.
pub fn canonical_frames(head_poses: &[RigidTransform]) -> Result<Vec<CanonicalFrame>, GeometryError> {
    let mut frames: Vec<CanonicalFrame> = Vec::with_capacity(head_poses.len());
    for (i, pose) in head_poses.iter().enumerate() {
        let heading = match horizontal_heading(pose) {
            Some(h) => h,
            None => match frames.last() {
                Some(prev) => prev.heading(),
                None => return Err(GeometryError::DegenerateHeading { frame: i }),
            },
        };
        frames.push(CanonicalFrame::from_heading(&pose.translation, &heading));
    }
    Ok(frames)
}
