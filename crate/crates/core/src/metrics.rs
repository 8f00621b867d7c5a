//! Evaluation metrics over predicted and ground-truth motion.
//!
//! Every metric is a ratio of sums, so per-sequence [`MetricAccumulator`]s
//! can be merged in any order and give the same aggregate as evaluating all
//! frames at once.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::skeleton::{KinematicTree, MotionSequence, ShapeParams, WRIST_JOINTS};

pub const DEFAULT_FPS: f64 = 30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("{what}: prediction has {pred} frames, reference has {gt}")]
    LengthMismatch { what: &'static str, pred: usize, gt: usize },
    #[error("empty shape prediction")]
    NoShapes,
}

/// Joint positions per frame.
pub type JointTrack = [Vec<Vector3<f64>>];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// mm
    pub mpjpe: f64,
    /// cm/s
    pub mpjve: f64,
    /// km/s³
    pub jerk: f64,
    /// mm
    pub hand_pe: f64,
    /// mm, absent when no hand was ever visible
    pub vis_hand_pe: Option<f64>,
    /// cm
    pub height_err: f64,
    pub span_err: f64,
    pub height_std: f64,
    pub span_std: f64,
    /// s
    pub runtime: f64,
}

fn check_len(what: &'static str, pred: usize, gt: usize) -> Result<(), MetricsError> {
    if pred == gt {
        Ok(())
    } else {
        Err(MetricsError::LengthMismatch { what, pred, gt })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Mean {
    sum: f64,
    count: usize,
}

impl Mean {
    fn add(&mut self, x: f64) {
        self.sum += x;
        self.count += 1;
    }

    fn merge(&mut self, other: &Mean) {
        self.sum += other.sum;
        self.count += other.count;
    }

    fn value(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

/// Mergeable partial sums of every metric.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricAccumulator {
    position: Mean,
    velocity: Mean,
    jerk: Mean,
    hand: Mean,
    visible_hand: Mean,
    height_err: Mean,
    span_err: Mean,
    height_std: Mean,
    span_std: Mean,
    runtime: f64,
}

fn velocities(track: &JointTrack, fps: f64) -> impl Iterator<Item = Vec<Vector3<f64>>> + '_ {
    track
        .windows(2)
        .map(move |w| w[1].iter().zip(&w[0]).map(|(b, a)| (b - a) * fps).collect())
}

impl MetricAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_positions(&mut self, pred: &JointTrack, gt: &JointTrack) -> Result<(), MetricsError> {
        check_len("positions", pred.len(), gt.len())?;
        for (p, g) in pred.iter().zip(gt) {
            check_len("joints", p.len(), g.len())?;
            for (a, b) in p.iter().zip(g) {
                self.position.add((a - b).norm());
            }
        }
        Ok(())
    }

    pub fn add_velocities(&mut self, pred: &JointTrack, gt: &JointTrack, fps: f64) -> Result<(), MetricsError> {
        check_len("velocities", pred.len(), gt.len())?;
        for (p, g) in velocities(pred, fps).zip(velocities(gt, fps)) {
            for (a, b) in p.iter().zip(&g) {
                self.velocity.add((a - b).norm());
            }
        }
        Ok(())
    }

    pub fn add_jerk(&mut self, pred: &JointTrack, fps: f64) {
        let scale = fps.powi(3);
        for w in pred.windows(4) {
            for j in 0..w[0].len() {
                let d3 = w[3][j] - 3.0 * w[2][j] + 3.0 * w[1][j] - w[0][j];
                self.jerk.add(d3.norm() * scale);
            }
        }
    }

    /// Wrist errors; `visibility[t][h]` marks frames where hand `h` was seen.
    pub fn add_hands(&mut self, pred: &JointTrack, gt: &JointTrack, visibility: &[[bool; 2]]) -> Result<(), MetricsError> {
        check_len("hands", pred.len(), gt.len())?;
        check_len("visibility", visibility.len(), gt.len())?;
        for ((p, g), vis) in pred.iter().zip(gt).zip(visibility) {
            for (h, &w) in WRIST_JOINTS.iter().enumerate() {
                let e = (p[w] - g[w]).norm();
                self.hand.add(e);
                if vis[h] {
                    self.visible_hand.add(e);
                }
            }
        }
        Ok(())
    }

    pub fn add_shape(&mut self, stats: &ShapeMetrics) {
        self.height_err.add(stats.height_err);
        self.span_err.add(stats.span_err);
        self.height_std.add(stats.height_std);
        self.span_std.add(stats.span_std);
    }

    pub fn add_runtime(&mut self, seconds: f64) {
        self.runtime += seconds;
    }

    pub fn merge(&mut self, other: &MetricAccumulator) {
        self.position.merge(&other.position);
        self.velocity.merge(&other.velocity);
        self.jerk.merge(&other.jerk);
        self.hand.merge(&other.hand);
        self.visible_hand.merge(&other.visible_hand);
        self.height_err.merge(&other.height_err);
        self.span_err.merge(&other.span_err);
        self.height_std.merge(&other.height_std);
        self.span_std.merge(&other.span_std);
        self.runtime += other.runtime;
    }

    pub fn report(&self) -> MetricReport {
        let v = |m: &Mean| m.value().unwrap_or(0.0);
        MetricReport {
            mpjpe: v(&self.position) * 1000.0,
            mpjve: v(&self.velocity) * 100.0,
            jerk: v(&self.jerk) * 1e-3,
            hand_pe: v(&self.hand) * 1000.0,
            vis_hand_pe: self.visible_hand.value().map(|x| x * 1000.0),
            height_err: v(&self.height_err),
            span_err: v(&self.span_err),
            height_std: v(&self.height_std),
            span_std: v(&self.span_std),
            runtime: self.runtime,
        }
    }
}

/// Mean joint position error in mm.
pub fn mpjpe(tree: &KinematicTree, pred: &MotionSequence, gt: &MotionSequence) -> Result<f64, MetricsError> {
    let mut acc = MetricAccumulator::new();
    acc.add_positions(&tree.motion_joints(pred), &tree.motion_joints(gt))?;
    Ok(acc.report().mpjpe)
}

/// Mean joint velocity error in cm/s.
pub fn mpjve(tree: &KinematicTree, pred: &MotionSequence, gt: &MotionSequence, fps: f64) -> Result<f64, MetricsError> {
    let mut acc = MetricAccumulator::new();
    acc.add_velocities(&tree.motion_joints(pred), &tree.motion_joints(gt), fps)?;
    Ok(acc.report().mpjve)
}

/// Mean jerk magnitude in km/s³.
pub fn jerk(tree: &KinematicTree, pred: &MotionSequence, fps: f64) -> f64 {
    jerk_of_track(&tree.motion_joints(pred), fps)
}

pub fn jerk_of_track(track: &JointTrack, fps: f64) -> f64 {
    let mut acc = MetricAccumulator::new();
    acc.add_jerk(track, fps);
    acc.report().jerk
}

/// Wrist error in mm; `None` when `visible_only` and nothing was visible.
pub fn hand_pe(
    tree: &KinematicTree,
    pred: &MotionSequence,
    gt: &MotionSequence,
    visibility: &[[bool; 2]],
    visible_only: bool,
) -> Result<Option<f64>, MetricsError> {
    let mut acc = MetricAccumulator::new();
    acc.add_hands(&tree.motion_joints(pred), &tree.motion_joints(gt), visibility)?;
    let r = acc.report();
    Ok(if visible_only { r.vis_hand_pe } else { Some(r.hand_pe) })
}

/// Predicted body shape: one per sequence or one per frame.
#[derive(Debug, Clone, PartialEq)]
pub enum ShapePrediction {
    Single(ShapeParams),
    PerFrame(Vec<ShapeParams>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeMetrics {
    /// All in cm.
    pub height_err: f64,
    pub span_err: f64,
    pub height_std: f64,
    pub span_std: f64,
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// T-pose height and span errors against the reference shape, plus the
/// (population) spread of per-frame predictions.
pub fn shape_metrics(tree: &KinematicTree, pred: &ShapePrediction, gt: &ShapeParams) -> Result<ShapeMetrics, MetricsError> {
    let (gt_h, gt_s) = tree.height_and_span(gt);
    match pred {
        ShapePrediction::Single(shape) => {
            let (h, s) = tree.height_and_span(shape);
            Ok(ShapeMetrics {
                height_err: (h - gt_h).abs() * 100.0,
                span_err: (s - gt_s).abs() * 100.0,
                height_std: 0.0,
                span_std: 0.0,
            })
        }
        ShapePrediction::PerFrame(shapes) => {
            if shapes.is_empty() {
                return Err(MetricsError::NoShapes);
            }
            let (hs, ss): (Vec<f64>, Vec<f64>) = shapes.iter().map(|b| tree.height_and_span(b)).unzip();
            let err = |xs: &[f64], g: f64| xs.iter().map(|x| (x - g).abs()).sum::<f64>() / xs.len() as f64 * 100.0;
            Ok(ShapeMetrics {
                height_err: err(&hs, gt_h),
                span_err: err(&ss, gt_s),
                height_std: mean_and_std(&hs).1 * 100.0,
                span_std: mean_and_std(&ss).1 * 100.0,
            })
        }
    }
}

/// All metrics of one sequence. `visibility` is per output frame.
pub fn evaluate_sequence(
    tree: &KinematicTree,
    pred: &MotionSequence,
    gt: &MotionSequence,
    visibility: &[[bool; 2]],
    fps: f64,
) -> Result<MetricAccumulator, MetricsError> {
    let p = tree.motion_joints(pred);
    let g = tree.motion_joints(gt);
    let mut acc = MetricAccumulator::new();
    acc.add_positions(&p, &g)?;
    acc.add_velocities(&p, &g, fps)?;
    acc.add_jerk(&p, fps);
    acc.add_hands(&p, &g, visibility)?;
    acc.add_shape(&shape_metrics(tree, &ShapePrediction::Single(pred.shape), &gt.shape)?);
    Ok(acc)
}
