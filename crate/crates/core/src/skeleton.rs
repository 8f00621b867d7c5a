//! A 22-joint parametric body standing in for SMPL.
//!
//! Bone lengths are linear in a 16-D shape vector. The body faces +y in its
//! rest pose with +z up, so the person's left side is at -x.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

use crate::geometry::{rot6d_decode, rot6d_encode, RigidTransform, Rotation};

pub const NUM_JOINTS: usize = 22;
pub const NUM_BODY_JOINTS: usize = NUM_JOINTS - 1;
pub const SHAPE_DIM: usize = 16;
/// Shape coefficients are clamped to `[-SHAPE_LIMIT, SHAPE_LIMIT]`.
pub const SHAPE_LIMIT: f64 = 5.0;
/// Per-frame canonical pose feature width: root plus 21 joints, 6-D each.
pub const POSE_FEATURES: usize = NUM_JOINTS * 6;

pub const HEAD_PAD: f64 = 0.11;
pub const FOOT_PAD: f64 = 0.03;

pub mod joint {
    pub const PELVIS: usize = 0;
    pub const LEFT_HIP: usize = 1;
    pub const RIGHT_HIP: usize = 2;
    pub const SPINE1: usize = 3;
    pub const LEFT_KNEE: usize = 4;
    pub const RIGHT_KNEE: usize = 5;
    pub const SPINE2: usize = 6;
    pub const LEFT_ANKLE: usize = 7;
    pub const RIGHT_ANKLE: usize = 8;
    pub const SPINE3: usize = 9;
    pub const LEFT_FOOT: usize = 10;
    pub const RIGHT_FOOT: usize = 11;
    pub const NECK: usize = 12;
    pub const LEFT_COLLAR: usize = 13;
    pub const RIGHT_COLLAR: usize = 14;
    pub const HEAD: usize = 15;
    pub const LEFT_SHOULDER: usize = 16;
    pub const RIGHT_SHOULDER: usize = 17;
    pub const LEFT_ELBOW: usize = 18;
    pub const RIGHT_ELBOW: usize = 19;
    pub const LEFT_WRIST: usize = 20;
    pub const RIGHT_WRIST: usize = 21;
}

/// Wrist joints indexed by hand (0 = left, 1 = right).
pub const WRIST_JOINTS: [usize; 2] = [joint::LEFT_WRIST, joint::RIGHT_WRIST];
/// Foot joints indexed by side (0 = left, 1 = right).
pub const FOOT_JOINTS: [usize; 2] = [joint::LEFT_FOOT, joint::RIGHT_FOOT];
/// Joints whose rotations the hand guidance may change, per hand, root-most first.
pub const ARM_JOINTS: [[usize; 4]; 2] = [
    [joint::LEFT_COLLAR, joint::LEFT_SHOULDER, joint::LEFT_ELBOW, joint::LEFT_WRIST],
    [joint::RIGHT_COLLAR, joint::RIGHT_SHOULDER, joint::RIGHT_ELBOW, joint::RIGHT_WRIST],
];

const MIRROR_PAIRS: [(usize, usize); 8] = [
    (1, 2),
    (4, 5),
    (7, 8),
    (10, 11),
    (13, 14),
    (16, 17),
    (18, 19),
    (20, 21),
];

/// Shape coefficients, clamped to the valid box on construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; SHAPE_DIM]", into = "[f64; SHAPE_DIM]")]
pub struct ShapeParams([f64; SHAPE_DIM]);

impl ShapeParams {
    pub fn new(values: [f64; SHAPE_DIM]) -> Self {
        let mut v = values;
        for x in &mut v {
            *x = if x.is_finite() {
                x.clamp(-SHAPE_LIMIT, SHAPE_LIMIT)
            } else {
                0.0
            };
        }
        Self(v)
    }

    pub fn zeros() -> Self {
        Self([0.0; SHAPE_DIM])
    }

    pub fn from_slice(values: &[f64]) -> Self {
        let mut v = [0.0; SHAPE_DIM];
        for (dst, src) in v.iter_mut().zip(values) {
            *dst = *src;
        }
        Self::new(v)
    }

    pub fn values(&self) -> &[f64; SHAPE_DIM] {
        &self.0
    }
}

impl Default for ShapeParams {
    fn default() -> Self {
        Self::zeros()
    }
}

impl From<[f64; SHAPE_DIM]> for ShapeParams {
    fn from(v: [f64; SHAPE_DIM]) -> Self {
        Self::new(v)
    }
}

impl From<ShapeParams> for [f64; SHAPE_DIM] {
    fn from(s: ShapeParams) -> Self {
        s.0
    }
}

/// One frame of world-space body pose.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseFrame {
    pub root_translation: Vector3<f64>,
    pub root_orientation: Rotation,
    /// Local rotations of joints 1..22, each relative to its parent.
    pub joint_angles: Vec<Rotation>,
}

impl PoseFrame {
    pub fn identity() -> Self {
        Self {
            root_translation: Vector3::zeros(),
            root_orientation: Rotation::identity(),
            joint_angles: vec![Rotation::identity(); NUM_BODY_JOINTS],
        }
    }
}

/// Full-body motion `{β, r, Φ, Θ}` in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub shape: ShapeParams,
    pub frames: Vec<PoseFrame>,
}

impl MotionSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Root orientation relative to the canonical frame plus local joint angles.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalPose {
    pub root_to_cano: Rotation,
    pub joint_angles: Vec<Rotation>,
}

impl CanonicalPose {
    /// Flat `[root, joint 1, …, joint 21]` 6-D encoding, `POSE_FEATURES` wide.
    pub fn to_features(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(POSE_FEATURES);
        out.extend_from_slice(&rot6d_encode(&self.root_to_cano));
        for r in &self.joint_angles {
            out.extend_from_slice(&rot6d_encode(r));
        }
        out
    }

    pub fn from_features(features: &[f64]) -> Self {
        assert_eq!(features.len(), POSE_FEATURES, "canonical pose feature width");
        let decode = |i: usize| {
            let mut v = [0.0; 6];
            v.copy_from_slice(&features[i * 6..i * 6 + 6]);
            rot6d_decode(&v)
        };
        Self {
            root_to_cano: decode(0),
            joint_angles: (1..NUM_JOINTS).map(decode).collect(),
        }
    }
}

/// World positions and orientations of every joint.
#[derive(Debug, Clone)]
pub struct JointTransforms {
    pub positions: Vec<Vector3<f64>>,
    pub rotations: Vec<Rotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicTree {
    pub version: u32,
    pub names: Vec<String>,
    pub parents: Vec<Option<usize>>,
    /// Unit direction of the bone from the parent to this joint (rest pose,
    /// parent frame). Zero for the root.
    pub rest_directions: Vec<[f64; 3]>,
    pub base_lengths: Vec<f64>,
    /// Meters of bone length per unit of each shape coefficient.
    pub shape_basis: Vec<[f64; SHAPE_DIM]>,
}

/// Versioned JSON form of the built-in tree.
pub const DEFAULT_TREE_JSON: &str = include_str!("../assets/skeleton_v1.json");

impl KinematicTree {
    /// The shipped 22-joint tree, parsed once from the bundled asset.
    pub fn default_tree() -> &'static KinematicTree {
        static TREE: OnceLock<KinematicTree> = OnceLock::new();
        TREE.get_or_init(|| {
            KinematicTree::from_json(DEFAULT_TREE_JSON).expect("bundled skeleton asset is valid")
        })
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree serializes")
    }

    pub fn num_joints(&self) -> usize {
        self.parents.len()
    }

    /// Builds the default tree from its rest geometry. The bundled asset is
    /// generated from this and kept in sync by a test.
    pub fn build_default() -> Self {
        use joint::*;
        let spec: [(&str, Option<usize>, [f64; 3], f64); NUM_JOINTS] = [
            ("pelvis", None, [0.0, 0.0, 0.0], 0.0),
            ("left_hip", Some(PELVIS), [-0.55, 0.0, -0.83], 0.11),
            ("right_hip", Some(PELVIS), [0.55, 0.0, -0.83], 0.11),
            ("spine1", Some(PELVIS), [0.0, -0.1, 1.0], 0.11),
            ("left_knee", Some(LEFT_HIP), [0.0, 0.0, -1.0], 0.38),
            ("right_knee", Some(RIGHT_HIP), [0.0, 0.0, -1.0], 0.38),
            ("spine2", Some(SPINE1), [0.0, 0.05, 1.0], 0.13),
            ("left_ankle", Some(LEFT_KNEE), [0.0, -0.05, -1.0], 0.40),
            ("right_ankle", Some(RIGHT_KNEE), [0.0, -0.05, -1.0], 0.40),
            ("spine3", Some(SPINE2), [0.0, 0.0, 1.0], 0.055),
            ("left_foot", Some(LEFT_ANKLE), [0.0, 0.92, -0.39], 0.13),
            ("right_foot", Some(RIGHT_ANKLE), [0.0, 0.92, -0.39], 0.13),
            ("neck", Some(SPINE3), [0.0, 0.0, 1.0], 0.21),
            ("left_collar", Some(SPINE3), [-0.55, 0.0, 0.83], 0.13),
            ("right_collar", Some(SPINE3), [0.55, 0.0, 0.83], 0.13),
            ("head", Some(NECK), [0.0, 0.2, 0.98], 0.10),
            ("left_shoulder", Some(LEFT_COLLAR), [-1.0, 0.0, -0.2], 0.10),
            ("right_shoulder", Some(RIGHT_COLLAR), [1.0, 0.0, -0.2], 0.10),
            ("left_elbow", Some(LEFT_SHOULDER), [-1.0, 0.0, 0.0], 0.26),
            ("right_elbow", Some(RIGHT_SHOULDER), [1.0, 0.0, 0.0], 0.26),
            ("left_wrist", Some(LEFT_ELBOW), [-1.0, 0.0, 0.0], 0.25),
            ("right_wrist", Some(RIGHT_ELBOW), [1.0, 0.0, 0.0], 0.25),
        ];

        let legs = [1, 2, 4, 5, 7, 8, 10, 11];
        let arms = [16, 17, 18, 19, 20, 21];
        let spine = [3, 6, 9, 12, 15];
        let collars = [13, 14];
        let hips = [1, 2];
        let mirror_rep = |j: usize| {
            MIRROR_PAIRS
                .iter()
                .find(|(l, r)| *l == j || *r == j)
                .map_or(j, |(l, _)| *l)
        };

        let mut names = Vec::new();
        let mut parents = Vec::new();
        let mut dirs = Vec::new();
        let mut lengths = Vec::new();
        let mut basis = Vec::new();
        for (j, (name, parent, dir, len)) in spec.iter().enumerate() {
            names.push(name.to_string());
            parents.push(*parent);
            let d = Vector3::from(*dir);
            let d = if d.norm() > 0.0 { d.normalize() } else { d };
            dirs.push([d.x, d.y, d.z]);
            lengths.push(*len);

            let mut row = [0.0; SHAPE_DIM];
            if parent.is_some() {
                // first coefficient: uniform scale
                row[0] = 0.06 * len;
                if legs.contains(&j) {
                    row[1] = 0.02 * len;
                }
                if arms.contains(&j) {
                    row[2] = 0.02 * len;
                }
                if spine.contains(&j) {
                    row[3] = 0.02 * len;
                }
                if collars.contains(&j) {
                    row[4] = 0.03 * len;
                }
                if hips.contains(&j) {
                    row[5] = 0.03 * len;
                }
                let rep = mirror_rep(j) as f64;
                for (k, v) in row.iter_mut().enumerate().skip(6) {
                    *v = 0.004 * ((rep + 1.0) * (k as f64 + 1.0) * 1.3).sin() * len;
                }
            }
            basis.push(row);
        }

        Self {
            version: 1,
            names,
            parents,
            rest_directions: dirs,
            base_lengths: lengths,
            shape_basis: basis,
        }
    }

    /// `base + basis·β` per joint (zero for the root).
    pub fn bone_lengths(&self, shape: &ShapeParams) -> Vec<f64> {
        self.base_lengths
            .iter()
            .zip(&self.shape_basis)
            .map(|(base, row)| base + row.iter().zip(shape.values()).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }

    /// Rest-frame offsets from each parent, scaled by shape.
    pub fn bone_offsets(&self, shape: &ShapeParams) -> Vec<Vector3<f64>> {
        self.bone_lengths(shape)
            .iter()
            .zip(&self.rest_directions)
            .map(|(len, dir)| Vector3::from(*dir) * *len)
            .collect()
    }

    /// Joint world transforms for one frame.
    pub fn forward_kinematics_full(&self, pose: &PoseFrame, shape: &ShapeParams) -> JointTransforms {
        let offsets = self.bone_offsets(shape);
        let n = self.num_joints();
        let mut positions = Vec::with_capacity(n);
        let mut rotations = Vec::with_capacity(n);
        positions.push(pose.root_translation);
        rotations.push(pose.root_orientation);
        for j in 1..n {
            let p = self.parents[j].expect("non-root joint has a parent");
            let parent_rot = rotations[p];
            positions.push(positions[p] + parent_rot * offsets[j]);
            rotations.push(parent_rot * pose.joint_angles[j - 1]);
        }
        JointTransforms {
            positions,
            rotations,
        }
    }

    /// World positions of all joints for one frame.
    pub fn forward_kinematics(&self, pose: &PoseFrame, shape: &ShapeParams) -> Vec<Vector3<f64>> {
        self.forward_kinematics_full(pose, shape).positions
    }

    /// Joint positions for every frame of a motion.
    pub fn motion_joints(&self, motion: &MotionSequence) -> Vec<Vec<Vector3<f64>>> {
        motion
            .frames
            .iter()
            .map(|f| self.forward_kinematics(f, &motion.shape))
            .collect()
    }

    /// Rest pose with identity rotations and the root at the origin.
    pub fn tpose_joints(&self, shape: &ShapeParams) -> Vec<Vector3<f64>> {
        self.forward_kinematics(&PoseFrame::identity(), shape)
    }

    /// Body height (vertical extent plus head/foot pads) and arm span of the
    /// rest pose, in meters.
    pub fn height_and_span(&self, shape: &ShapeParams) -> (f64, f64) {
        let joints = self.tpose_joints(shape);
        let (min_z, max_z) = extent(joints.iter().map(|p| p.z));
        let (min_x, max_x) = extent(joints.iter().map(|p| p.x));
        (max_z - min_z + HEAD_PAD + FOOT_PAD, max_x - min_x)
    }
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Pose of the head joint expressed in the camera frame; a rigid mount
/// offset computed for the mean body.
pub const CAMERA_TO_HEAD_OFFSET: [f64; 3] = [0.0, -0.05, -0.10];

/// Head pose from a camera pose through a fixed mount offset.
pub fn head_from_camera(camera_pose: &RigidTransform) -> RigidTransform {
    let [x, y, z] = CAMERA_TO_HEAD_OFFSET;
    head_from_camera_with(camera_pose, &RigidTransform::from_translation(x, y, z))
}

pub fn head_from_camera_with(camera_pose: &RigidTransform, offset: &RigidTransform) -> RigidTransform {
    camera_pose.compose(offset)
}
