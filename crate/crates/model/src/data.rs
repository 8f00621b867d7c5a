//! Turns records into flat training arrays and assembles cropped, augmented
//! mini-batches.

use candle_core::{DType, Device, Tensor};
use hamos_core::augmentation::{apply_augmentation, DropMode, DropSpec, FovPreset};
use hamos_core::conditioning::{build_raw_features, layout, HandObservation, RAW_FEATURE_DIM};
use hamos_core::geometry::{canonical_frames, canonicalize, RigidTransform};
use hamos_core::record::SequenceRecord;
use hamos_core::skeleton::{joint, KinematicTree, MotionSequence, NUM_JOINTS, POSE_FEATURES, SHAPE_DIM, WRIST_JOINTS};
use rand::Rng;

use crate::ModelError;

/// Head poses for frames `0..=T`. Records without a head track fall back to
/// the forward-kinematics head, repeating frame 1 as the reference frame.
pub fn head_track(tree: &KinematicTree, record: &SequenceRecord) -> Vec<RigidTransform> {
    if let Some(h) = &record.head {
        return h.clone();
    }
    let mut out: Vec<RigidTransform> = record
        .motion
        .frames
        .iter()
        .map(|f| {
            let fk = tree.forward_kinematics_full(f, &record.motion.shape);
            RigidTransform::new(fk.rotations[joint::HEAD], fk.positions[joint::HEAD])
        })
        .collect();
    out.insert(0, out[0]);
    out
}

/// Ground-truth wrist poses in head coordinates for frames `1..=T`.
pub fn true_hands_in_head(tree: &KinematicTree, motion: &MotionSequence, head: &[RigidTransform]) -> [Vec<RigidTransform>; 2] {
    let mut out = [Vec::with_capacity(motion.len()), Vec::with_capacity(motion.len())];
    for (t, f) in motion.frames.iter().enumerate() {
        let fk = tree.forward_kinematics_full(f, &motion.shape);
        let inv = head[t + 1].inverse();
        for (h, &w) in WRIST_JOINTS.iter().enumerate() {
            out[h].push(inv.compose(&RigidTransform::new(fk.rotations[w], fk.positions[w])));
        }
    }
    out
}

/// Conditioning vectors for frames `1..=T` from an observed head track and
/// hand observations over `0..=T`.
pub fn observation_features(head: &[RigidTransform], hands: &[[HandObservation; 2]]) -> Result<Vec<[f64; RAW_FEATURE_DIM]>, ModelError> {
    Ok(build_raw_features(head, hands)?.iter().map(|f| f.to_vector()).collect())
}

/// Clears the slot and flag of every hidden hand.
pub fn mask_hands(raw: &mut [f64; RAW_FEATURE_DIM], visible: [bool; 2]) {
    for h in 0..2 {
        if !visible[h] {
            let s = layout::HAND[h];
            raw[s..s + layout::HAND_WIDTH].iter_mut().for_each(|v| *v = 0.0);
            raw[layout::VISIBLE[h]] = 0.0;
        }
    }
}

/// One sequence prepared for training; every per-frame array covers output
/// frames `1..=T`.
#[derive(Debug, Clone)]
pub struct TrainingSequence {
    pub id: String,
    pub frames: usize,
    /// Conditioning with both hands visible.
    pub raw: Vec<[f64; RAW_FEATURE_DIM]>,
    pub hands_in_head: [Vec<RigidTransform>; 2],
    /// `T × 132` canonical pose features.
    pub target: Vec<f64>,
    /// `T × 9` row-major canonical-to-world rotations.
    pub canonical: Vec<f64>,
    /// `T × 3`
    pub head_pos: Vec<f64>,
    /// `T × 22 × 3`
    pub joints: Vec<f64>,
    /// `T × 2`
    pub contacts: Vec<f64>,
    pub shape: [f64; SHAPE_DIM],
}

impl TrainingSequence {
    pub fn from_record(tree: &KinematicTree, record: &SequenceRecord) -> Result<Self, ModelError> {
        let frames = record.num_frames();
        if frames == 0 {
            return Err(ModelError::LengthMismatch { what: "record", got: 0, expected: 1 });
        }
        let head = head_track(tree, record);
        let hands_in_head = true_hands_in_head(tree, &record.motion, &head);
        let mut obs: Vec<[HandObservation; 2]> = (0..frames)
            .map(|t| [0, 1].map(|h| HandObservation { pose: hands_in_head[h][t], visible: true }))
            .collect();
        obs.insert(0, obs[0]);
        let raw = observation_features(&head, &obs)?;
        let cano = canonical_frames(&head)?;
        let poses = canonicalize(&record.motion, &cano[1..])?;
        let target: Vec<f64> = poses.iter().flat_map(|p| p.to_features()).collect();
        let canonical = cano[1..]
            .iter()
            .flat_map(|c| {
                let m = c.rotation().matrix();
                (0..3).flat_map(move |i| (0..3).map(move |j| m[(i, j)]))
            })
            .collect();
        let head_pos = head[1..].iter().flat_map(|h| h.translation.iter().copied().collect::<Vec<_>>()).collect();
        let joints = tree
            .motion_joints(&record.motion)
            .iter()
            .flat_map(|f| f.iter().flat_map(|p| [p.x, p.y, p.z]).collect::<Vec<_>>())
            .collect();
        let contacts = record.contacts.iter().flat_map(|c| c.map(|b| b as u8 as f64)).collect();
        Ok(Self {
            id: record.id.clone(),
            frames,
            raw,
            hands_in_head,
            target,
            canonical,
            head_pos,
            joints,
            contacts,
            shape: *record.motion.shape.values(),
        })
    }
}

/// Batched tensors for one step, frames cropped to a common length.
pub struct Batch {
    /// `(B, L, 42)`
    pub raw: Tensor,
    /// `(B, L, 132)`
    pub target: Tensor,
    /// `(B, 16)`
    pub shape: Tensor,
    /// `(B, L, 22, 3)`
    pub joints: Tensor,
    /// `(B, L, 3, 3)`
    pub canonical: Tensor,
    /// `(B, L, 3)`
    pub head_pos: Tensor,
    /// `(B, L, 2)`
    pub contacts: Tensor,
}

/// How conditioning is corrupted during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corruption {
    pub fov: FovPreset,
    pub drops: bool,
}

/// Visibility for frames `[start, start+len)` of a sequence under a freshly
/// sampled field of view and drop pattern.
pub fn sample_visibility<R: Rng + ?Sized>(seq: &TrainingSequence, start: usize, len: usize, corruption: &Corruption, rng: &mut R) -> Result<Vec<[bool; 2]>, ModelError> {
    let fov = corruption.fov.resolve(rng)?;
    let (short, long) = if corruption.drops {
        (DropSpec::sample(DropMode::Short, rng), DropSpec::sample(DropMode::Long, rng))
    } else {
        (DropSpec::short(0.0), DropSpec::long(0.0))
    };
    let range = start..start + len;
    let obs = apply_augmentation(
        [&seq.hands_in_head[0][range.clone()], &seq.hands_in_head[1][range]],
        &fov,
        &short,
        &long,
        rng,
    );
    Ok(obs.iter().map(|o| [o[0].visible, o[1].visible]).collect())
}

/// Picks sequences, crops a random window of common length (at most
/// `max_len`), corrupts hand visibility and stacks the result.
pub fn sample_batch<R: Rng + ?Sized>(
    data: &[TrainingSequence],
    batch_size: usize,
    max_len: usize,
    corruption: &Corruption,
    rng: &mut R,
    dtype: DType,
    device: &Device,
) -> Result<Batch, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let picks: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..data.len())).collect();
    let len = picks.iter().map(|&i| data[i].frames).min().unwrap_or(1).min(max_len).max(1);
    let mut raw = Vec::with_capacity(batch_size * len * RAW_FEATURE_DIM);
    let (mut target, mut shape, mut joints, mut canonical, mut head_pos, mut contacts) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for &i in &picks {
        let seq = &data[i];
        let start = rng.random_range(0..=seq.frames - len);
        let vis = sample_visibility(seq, start, len, corruption, rng)?;
        for (t, v) in (start..start + len).zip(vis) {
            let mut r = seq.raw[t];
            mask_hands(&mut r, v);
            raw.extend_from_slice(&r);
        }
        let cut = |v: &[f64], w: usize| v[start * w..(start + len) * w].to_vec();
        target.extend(cut(&seq.target, POSE_FEATURES));
        canonical.extend(cut(&seq.canonical, 9));
        head_pos.extend(cut(&seq.head_pos, 3));
        joints.extend(cut(&seq.joints, NUM_JOINTS * 3));
        contacts.extend(cut(&seq.contacts, 2));
        shape.extend_from_slice(&seq.shape);
    }
    let b = batch_size;
    let t = |v: Vec<f64>, s: &[usize]| Tensor::from_vec(v, s, device)?.to_dtype(dtype);
    Ok(Batch {
        raw: t(raw, &[b, len, RAW_FEATURE_DIM])?,
        target: t(target, &[b, len, POSE_FEATURES])?,
        shape: t(shape, &[b, SHAPE_DIM])?,
        joints: t(joints, &[b, len, NUM_JOINTS, 3])?,
        canonical: t(canonical, &[b, len, 3, 3])?,
        head_pos: t(head_pos, &[b, len, 3])?,
        contacts: t(contacts, &[b, len, 2])?,
    })
}
