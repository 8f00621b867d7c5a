//! World-invariant per-frame features built from the head trajectory and the
//! hand observations. The learned projection to the conditioning vector lives
//! in the model crate; this module produces its fixed-layout input.

use thiserror::Error;

use crate::geometry::{
    canonical_frames, relative_head_motion, rot6d_encode, GeometryError, RigidTransform, Rotation,
};

/// A wrist pose in head coordinates and whether it was observed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandObservation {
    pub pose: RigidTransform,
    pub visible: bool,
}

impl HandObservation {
    pub fn hidden() -> Self {
        Self {
            pose: RigidTransform::identity(),
            visible: false,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConditioningError {
    #[error("need at least two head poses (frame 0 is the delta reference), got {0}")]
    TooShort(usize),
    #[error("hand observations have {hands} frames but the head trajectory has {head}")]
    LengthMismatch { head: usize, hands: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Layout of [`RawFrameFeatures::to_vector`].
pub mod layout {
    pub const HEAD_DELTA_ROT: usize = 0;
    pub const HEAD_DELTA_TRANS: usize = 6;
    pub const HEAD_TO_CANO: usize = 9;
    pub const HEAD_HEIGHT: usize = 15;
    pub const CANO_DELTA: usize = 16;
    /// Start of each hand's 9-wide slot (6-D rotation then translation).
    pub const HAND: [usize; 2] = [22, 31];
    pub const HAND_WIDTH: usize = 9;
    pub const VISIBLE: [usize; 2] = [40, 41];
    pub const WIDTH: usize = 42;
}

pub const RAW_FEATURE_DIM: usize = layout::WIDTH;

/// Invariant features for one output frame `t ≥ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFrameFeatures {
    /// Head pose at `t` expressed in the head frame at `t-1`.
    pub head_delta: RigidTransform,
    /// Head orientation relative to the canonical frame at `t`.
    pub head_to_cano: Rotation,
    /// Head height above the floor (m).
    pub head_height: f64,
    /// Canonical frame at `t` expressed in the canonical frame at `t-1`.
    pub cano_delta: Rotation,
    pub hands: [HandObservation; 2],
}

impl RawFrameFeatures {
    /// Fixed-width vector; hidden hand slots are zero and flagged by the
    /// visibility entries so the model can substitute its null embedding.
    pub fn to_vector(&self) -> [f64; RAW_FEATURE_DIM] {
        use layout::*;
        let mut v = [0.0; RAW_FEATURE_DIM];
        v[HEAD_DELTA_ROT..HEAD_DELTA_ROT + 6].copy_from_slice(&rot6d_encode(&self.head_delta.rotation));
        v[HEAD_DELTA_TRANS..HEAD_DELTA_TRANS + 3].copy_from_slice(self.head_delta.translation.as_slice());
        v[HEAD_TO_CANO..HEAD_TO_CANO + 6].copy_from_slice(&rot6d_encode(&self.head_to_cano));
        v[HEAD_HEIGHT] = self.head_height;
        v[CANO_DELTA..CANO_DELTA + 6].copy_from_slice(&rot6d_encode(&self.cano_delta));
        for (h, obs) in self.hands.iter().enumerate() {
            if obs.visible {
                let s = HAND[h];
                v[s..s + 6].copy_from_slice(&rot6d_encode(&obs.pose.rotation));
                v[s + 6..s + 9].copy_from_slice(obs.pose.translation.as_slice());
                v[VISIBLE[h]] = 1.0;
            }
        }
        v
    }
}

/// Features for frames `1..=T` from head poses and hand observations over
/// frames `0..=T`.
pub fn build_raw_features(
    head_poses: &[RigidTransform],
    hands: &[[HandObservation; 2]],
) -> Result<Vec<RawFrameFeatures>, ConditioningError> {
    if head_poses.len() < 2 {
        return Err(ConditioningError::TooShort(head_poses.len()));
    }
    if hands.len() != head_poses.len() {
        return Err(ConditioningError::LengthMismatch {
            head: head_poses.len(),
            hands: hands.len(),
        });
    }
    let frames = canonical_frames(head_poses)?;
    Ok((1..head_poses.len())
        .map(|t| {
            let head = &head_poses[t];
            RawFrameFeatures {
                head_delta: relative_head_motion(&head_poses[t - 1], head),
                head_to_cano: frames[t].rotation().inverse() * head.rotation,
                head_height: head.translation.z,
                cano_delta: frames[t - 1].rotation().inverse() * frames[t].rotation(),
                hands: hands[t],
            }
        })
        .collect())
}
