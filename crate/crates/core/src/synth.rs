//! Procedural motion used as a small stand-in for captured data.
//!
//! A sequence is a chain of activity segments (walk, squat, reach, turn,
//! idle) whose control parameters crossfade into each other. Joint angles
//! follow the controls plus smooth spline noise; the root is advanced so the
//! lower foot stays planted, and its height puts the lowest foot at the floor
//! pad. Head and wrist poses come from forward kinematics.

use std::f64::consts::{PI, TAU};
use std::ops::RangeInclusive;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::conditioning::HandObservation;
use crate::geometry::{yaw_rotation, RigidTransform, Rotation};
use crate::record::{SequenceRecord, RECORD_FPS};
use crate::seed::sequence_seed;
use crate::skeleton::{joint, KinematicTree, MotionSequence, PoseFrame, ShapeParams, FOOT_JOINTS, FOOT_PAD, NUM_BODY_JOINTS, NUM_JOINTS, SHAPE_DIM, WRIST_JOINTS};

/// Contact heuristic thresholds: foot height (m) and speed (m/s).
pub const CONTACT_HEIGHT: f64 = 0.05;
pub const CONTACT_SPEED: f64 = 0.30;

const CROSSFADE: usize = 15;
const NOISE_KEY_SPACING: usize = 15;
const SHOULDER_DROP: f64 = 1.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activity {
    Walk,
    Squat,
    Reach,
    Turn,
    Idle,
}

const ACTIVITIES: [Activity; 5] = [Activity::Walk, Activity::Squat, Activity::Reach, Activity::Turn, Activity::Idle];

/// Blendable control values at one instant.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Controls {
    stride: f64,
    cadence: f64,
    turn_rate: f64,
    squat: f64,
    reach: [f64; 2],
    head_pitch: f64,
    head_yaw: f64,
}

impl Controls {
    fn lerp(&self, other: &Controls, w: f64) -> Controls {
        let l = |a: f64, b: f64| a + (b - a) * w;
        Controls {
            stride: l(self.stride, other.stride),
            cadence: l(self.cadence, other.cadence),
            turn_rate: l(self.turn_rate, other.turn_rate),
            squat: l(self.squat, other.squat),
            reach: [l(self.reach[0], other.reach[0]), l(self.reach[1], other.reach[1])],
            head_pitch: l(self.head_pitch, other.head_pitch),
            head_yaw: l(self.head_yaw, other.head_yaw),
        }
    }
}

#[derive(Debug, Clone)]
struct Segment {
    start: usize,
    len: usize,
    stride: f64,
    cadence: f64,
    turn_rate: f64,
    depth: f64,
    reps: f64,
    reach: [f64; 2],
    pitch: f64,
    yaw: f64,
}

impl Segment {
    fn sample(rng: &mut ChaCha8Rng, start: usize) -> Self {
        let activity = ACTIVITIES[rng.random_range(0..ACTIVITIES.len())];
        let mut s = Segment {
            start,
            len: rng.random_range(45..=120),
            stride: 0.0,
            cadence: TAU * rng.random_range(0.8..1.0),
            turn_rate: 0.0,
            depth: 0.0,
            reps: 1.0,
            reach: [0.0; 2],
            pitch: rng.random_range(-0.35..0.05),
            yaw: rng.random_range(-0.4..0.4),
        };
        match activity {
            Activity::Walk => {
                s.stride = rng.random_range(0.2..0.4);
                s.turn_rate = rng.random_range(-0.3..0.3);
            }
            Activity::Squat => {
                s.depth = rng.random_range(0.6..1.1);
                s.reps = rng.random_range(1..=2) as f64;
                s.pitch = rng.random_range(-0.5..-0.1);
            }
            Activity::Reach => {
                let both = rng.random_bool(0.3);
                let side = rng.random_range(0..2);
                for h in 0..2 {
                    if both || h == side {
                        s.reach[h] = rng.random_range(0.6..1.6);
                    }
                }
                s.pitch = rng.random_range(-0.5..0.2);
                s.yaw = if both { 0.0 } else { [0.35, -0.35][side] * rng.random_range(0.3..1.0) };
            }
            Activity::Turn => {
                s.stride = 0.12;
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                s.turn_rate = sign * rng.random_range(0.8..1.5);
            }
            Activity::Idle => {}
        }
        s
    }

    fn controls(&self, t: usize) -> Controls {
        let u = ((t - self.start) as f64 / self.len as f64).clamp(0.0, 1.0);
        let bump = (PI * u).sin().powi(2);
        Controls {
            stride: self.stride,
            cadence: self.cadence,
            turn_rate: self.turn_rate,
            squat: self.depth * 0.5 * (1.0 - (TAU * self.reps * u).cos()),
            reach: self.reach.map(|r| r * bump),
            head_pitch: self.pitch,
            head_yaw: self.yaw,
        }
    }
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Catmull-Rom curve through Gaussian keyframes.
struct SplineNoise {
    keys: Vec<f64>,
    spacing: usize,
}

impl SplineNoise {
    fn new(rng: &mut ChaCha8Rng, frames: usize, spacing: usize, scale: f64) -> Self {
        let n = frames / spacing + 3;
        let keys = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * scale
            })
            .collect();
        Self { keys, spacing }
    }

    fn at(&self, t: usize) -> f64 {
        let i = t / self.spacing;
        let u = (t % self.spacing) as f64 / self.spacing as f64;
        let k = |j: isize| self.keys[(j.max(0) as usize).min(self.keys.len() - 1)];
        let i = i as isize;
        let (p0, p1, p2, p3) = (k(i - 1), k(i), k(i + 1), k(i + 2));
        0.5 * (2.0 * p1 + (p2 - p0) * u + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * u * u + (3.0 * p1 - p0 + p2 * -3.0 + p3) * u * u * u)
    }
}

fn euler(rx: f64, ry: f64, rz: f64) -> Rotation {
    Rotation::from_axis_angle(&Vector3::z_axis(), rz)
        * Rotation::from_axis_angle(&Vector3::x_axis(), rx)
        * Rotation::from_axis_angle(&Vector3::y_axis(), ry)
}

fn noise_scale(j: usize) -> f64 {
    use joint::*;
    match j {
        LEFT_HIP | RIGHT_HIP | LEFT_KNEE | RIGHT_KNEE | LEFT_ANKLE | RIGHT_ANKLE => 0.03,
        SPINE1 | SPINE2 | SPINE3 => 0.04,
        NECK | HEAD => 0.08,
        LEFT_COLLAR | RIGHT_COLLAR => 0.05,
        LEFT_SHOULDER | RIGHT_SHOULDER | LEFT_ELBOW | RIGHT_ELBOW => 0.12,
        LEFT_WRIST | RIGHT_WRIST => 0.2,
        _ => 0.0,
    }
}

/// Local joint rotations and root pitch for one frame.
fn pose_angles(c: &Controls, phase: f64, noise: &[[SplineNoise; 3]], t: usize) -> (Vec<Rotation>, f64) {
    use joint::*;
    let mut angles = [[0.0f64; 3]; NUM_JOINTS];
    let a = c.stride;
    let s = phase.sin();
    let swing = [phase.cos(), -phase.cos()];
    angles[LEFT_HIP][0] = a * s + c.squat;
    angles[RIGHT_HIP][0] = -a * s + c.squat;
    for (side, knee) in [LEFT_KNEE, RIGHT_KNEE].into_iter().enumerate() {
        angles[knee][0] = -1.5 * a * swing[side].max(0.0) - 2.0 * c.squat;
    }
    angles[LEFT_ANKLE][0] = c.squat;
    angles[RIGHT_ANKLE][0] = c.squat;
    for j in [SPINE1, SPINE2, SPINE3] {
        angles[j][0] = -0.15 * c.squat;
    }
    angles[SPINE1][2] = 0.1 * a * s;
    angles[NECK][0] = 0.4 * c.head_pitch;
    angles[HEAD][0] = 0.6 * c.head_pitch;
    angles[HEAD][2] = c.head_yaw;

    for (side, (shoulder, elbow)) in [(LEFT_SHOULDER, LEFT_ELBOW), (RIGHT_SHOULDER, RIGHT_ELBOW)].into_iter().enumerate() {
        let sign = if side == 0 { -1.0 } else { 1.0 };
        angles[shoulder][1] = sign * SHOULDER_DROP;
        angles[shoulder][0] = -sign * 0.8 * a * s + c.reach[side];
        let flex = (0.35 + 0.3 * a - 0.2 * c.reach[side]).max(0.05);
        angles[elbow][2] = sign * flex;
    }

    let joint_angles = (1..NUM_JOINTS)
        .map(|j| {
            let n = &noise[j];
            let e = angles[j];
            euler(e[0] + n[0].at(t), e[1] + n[1].at(t), e[2] + n[2].at(t))
        })
        .collect();
    (joint_angles, noise[0][0].at(t))
}

/// Foot contacts from joint heights and speeds (forward difference, backward
/// on the last frame).
pub fn detect_contacts(track: &[Vec<Vector3<f64>>], fps: f64) -> Vec<[bool; 2]> {
    let n = track.len();
    (0..n)
        .map(|t| {
            FOOT_JOINTS.map(|j| {
                let p = track[t][j];
                let speed = if n < 2 {
                    0.0
                } else if t + 1 < n {
                    (track[t + 1][j] - p).norm() * fps
                } else {
                    (p - track[t - 1][j]).norm() * fps
                };
                p.z < CONTACT_HEIGHT && speed < CONTACT_SPEED
            })
        })
        .collect()
}

fn random_shape(rng: &mut ChaCha8Rng) -> ShapeParams {
    let mut v = [0.0; SHAPE_DIM];
    for x in &mut v {
        *x = rng.random_range(-2.0..2.0);
    }
    ShapeParams::new(v)
}

/// One sequence of `frames` output frames (head and hands carry one extra
/// leading frame).
pub fn generate_sequence(tree: &KinematicTree, id: String, frames: usize, rng: &mut ChaCha8Rng) -> SequenceRecord {
    assert!(frames >= 1, "sequence needs at least one frame");
    let total = frames + 1;
    let dt = 1.0 / RECORD_FPS;
    let shape = random_shape(rng);

    let mut segments = Vec::new();
    let mut start = 0;
    while start < total {
        let s = Segment::sample(rng, start);
        start += s.len;
        segments.push(s);
    }
    let noise: Vec<[SplineNoise; 3]> = (0..NUM_JOINTS)
        .map(|j| {
            let scale = if j == 0 { 0.03 } else { noise_scale(j) };
            [0, 1, 2].map(|_| SplineNoise::new(rng, total, NOISE_KEY_SPACING, scale))
        })
        .collect();

    let mut phase = rng.random_range(0.0..TAU);
    let mut yaw = rng.random_range(-PI..PI);
    let mut planar = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), 0.0);
    let mut prev_feet: Option<[Vector3<f64>; 2]> = None;
    let mut poses = Vec::with_capacity(total);

    let mut seg = 0;
    for t in 0..total {
        while segments[seg].start + segments[seg].len <= t {
            seg += 1;
        }
        let cur = &segments[seg];
        let mut c = cur.controls(t);
        let fade_start = cur.start + cur.len - CROSSFADE;
        if t >= fade_start && seg + 1 < segments.len() {
            let next = &segments[seg + 1];
            let w = smoothstep((t - fade_start) as f64 / CROSSFADE as f64);
            c = c.lerp(&next.controls(next.start), w);
        }
        if t > 0 {
            phase += c.cadence * dt;
            yaw += c.turn_rate * dt;
        }
        let (joint_angles, pelvis_tilt) = pose_angles(&c, phase, &noise, t);
        let mut pose = PoseFrame {
            root_translation: Vector3::zeros(),
            root_orientation: yaw_rotation(yaw) * Rotation::from_axis_angle(&Vector3::x_axis(), pelvis_tilt),
            joint_angles,
        };
        let rel = tree.forward_kinematics(&pose, &shape);
        let feet = FOOT_JOINTS.map(|j| rel[j]);
        if let Some(prev) = prev_feet {
            // keep the lower foot fixed on the ground plane
            let stance = if feet[0].z <= feet[1].z { 0 } else { 1 };
            let mut d = feet[stance] - prev[stance];
            d.z = 0.0;
            planar -= d;
        }
        prev_feet = Some(feet);
        let lowest = rel.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
        pose.root_translation = planar + Vector3::new(0.0, 0.0, FOOT_PAD - lowest);
        poses.push(pose);
    }

    let motion_all = MotionSequence { shape, frames: poses };
    let mut head = Vec::with_capacity(total);
    let mut hands = Vec::with_capacity(total);
    for pose in &motion_all.frames {
        let fk = tree.forward_kinematics_full(pose, &shape);
        let h = RigidTransform::new(fk.rotations[joint::HEAD], fk.positions[joint::HEAD]);
        let inv = h.inverse();
        hands.push(WRIST_JOINTS.map(|w| HandObservation {
            pose: inv.compose(&RigidTransform::new(fk.rotations[w], fk.positions[w])),
            visible: true,
        }));
        head.push(h);
    }
    let motion = MotionSequence {
        shape,
        frames: motion_all.frames[1..].to_vec(),
    };
    let contacts = detect_contacts(&tree.motion_joints(&motion), RECORD_FPS);
    debug_assert_eq!(motion.frames[0].joint_angles.len(), NUM_BODY_JOINTS);
    SequenceRecord {
        id,
        fps: RECORD_FPS,
        motion,
        contacts,
        head: Some(head),
        hands: Some(hands),
    }
}

/// `count` sequences with lengths drawn from `lengths`. Each sequence has its
/// own seed derived from `seed` and its index.
pub fn generate_dataset(
    tree: &KinematicTree,
    count: usize,
    lengths: RangeInclusive<usize>,
    seed: u64,
) -> impl Iterator<Item = SequenceRecord> + '_ {
    (0..count).map(move |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(sequence_seed(seed, i as u64));
        let frames = rng.random_range(lengths.clone());
        generate_sequence(tree, format!("synth_{seed:x}_{i:05}"), frames, &mut rng)
    })
}
