//! JSON-lines motion records.
//!
//! One object per line:
//!
//! ```text
//! {id, fps, T, beta[16], root_t[T][3], root_R[T][6], joints[T][21][6],
//!  contacts[T][2], head_T[T+1]{R,t}, hands[T+1][2]{R,t,v}}
//! ```
//!
//! Rotations use the 6-D encoding. `head_T` and `hands` may be omitted on
//! ground-truth-only files; hand poses are in head coordinates.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conditioning::HandObservation;
use crate::geometry::{rot6d_decode, rot6d_encode, RigidTransform, Rotation};
use crate::skeleton::{MotionSequence, PoseFrame, ShapeParams, NUM_BODY_JOINTS, SHAPE_DIM};

pub const RECORD_FPS: f64 = 30.0;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("line {line}: schema violation: {message}")]
    SchemaViolation { line: usize, message: String },
    #[error("line {line}: decode error: {message}")]
    DecodeError { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl RecordError {
    pub fn line(&self) -> Option<usize> {
        match self {
            RecordError::SchemaViolation { line, .. } | RecordError::DecodeError { line, .. } => Some(*line),
            RecordError::Io { .. } => None,
        }
    }

    fn with_line(self, line: usize) -> Self {
        match self {
            RecordError::SchemaViolation { message, .. } => RecordError::SchemaViolation { line, message },
            RecordError::DecodeError { message, .. } => RecordError::DecodeError { line, message },
            other => other,
        }
    }
}

fn schema(message: impl Into<String>) -> RecordError {
    RecordError::SchemaViolation {
        line: 0,
        message: message.into(),
    }
}

/// One sequence with typed geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRecord {
    pub id: String,
    pub fps: f64,
    /// Frames `1..=T`.
    pub motion: MotionSequence,
    /// Foot contact per output frame, `[left, right]`.
    pub contacts: Vec<[bool; 2]>,
    /// Head poses for frames `0..=T`.
    pub head: Option<Vec<RigidTransform>>,
    /// Wrist poses in head coordinates for frames `0..=T`.
    pub hands: Option<Vec<[HandObservation; 2]>>,
}

impl SequenceRecord {
    pub fn num_frames(&self) -> usize {
        self.motion.len()
    }

    /// Per-output-frame visibility (`hands[1..]`); all hidden without hands.
    pub fn visibility(&self) -> Vec<[bool; 2]> {
        match &self.hands {
            Some(h) => h[1..].iter().map(|f| [f[0].visible, f[1].visible]).collect(),
            None => vec![[false; 2]; self.num_frames()],
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&WireRecord::from(self)).expect("records serialize")
    }

    pub fn from_json_line(text: &str) -> Result<Self, RecordError> {
        let wire: WireRecord = serde_json::from_str(text).map_err(|e| RecordError::DecodeError {
            line: 0,
            message: e.to_string(),
        })?;
        wire.into_record()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WirePose {
    #[serde(rename = "R")]
    rotation: [f64; 6],
    t: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireHand {
    #[serde(rename = "R")]
    rotation: [f64; 6],
    t: [f64; 3],
    v: u8,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireRecord {
    id: String,
    fps: f64,
    #[serde(rename = "T")]
    frames: usize,
    beta: Vec<f64>,
    root_t: Vec<[f64; 3]>,
    #[serde(rename = "root_R")]
    root_r: Vec<[f64; 6]>,
    joints: Vec<Vec<[f64; 6]>>,
    contacts: Vec<[u8; 2]>,
    #[serde(rename = "head_T", default, skip_serializing_if = "Option::is_none")]
    head: Option<Vec<WirePose>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hands: Option<Vec<[WireHand; 2]>>,
}

fn vec3(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn wire_pose(p: &RigidTransform) -> WirePose {
    WirePose {
        rotation: rot6d_encode(&p.rotation),
        t: vec3(&p.translation),
    }
}

impl From<&SequenceRecord> for WireRecord {
    fn from(r: &SequenceRecord) -> Self {
        WireRecord {
            id: r.id.clone(),
            fps: r.fps,
            frames: r.num_frames(),
            beta: r.motion.shape.values().to_vec(),
            root_t: r.motion.frames.iter().map(|f| vec3(&f.root_translation)).collect(),
            root_r: r.motion.frames.iter().map(|f| rot6d_encode(&f.root_orientation)).collect(),
            joints: r
                .motion
                .frames
                .iter()
                .map(|f| f.joint_angles.iter().map(rot6d_encode).collect())
                .collect(),
            contacts: r.contacts.iter().map(|c| c.map(u8::from)).collect(),
            head: r.head.as_ref().map(|h| h.iter().map(wire_pose).collect()),
            hands: r.hands.as_ref().map(|h| {
                h.iter()
                    .map(|pair| {
                        pair.map(|o| WireHand {
                            rotation: rot6d_encode(&o.pose.rotation),
                            t: vec3(&o.pose.translation),
                            v: u8::from(o.visible),
                        })
                    })
                    .collect()
            }),
        }
    }
}

/// Decodes a 6-D rotation, rejecting non-finite, near-zero or parallel columns.
fn decode_rotation(v: &[f64; 6], what: &str) -> Result<Rotation, RecordError> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(schema(format!("{what}: non-finite rotation")));
    }
    let a = Vector3::new(v[0], v[1], v[2]);
    let b = Vector3::new(v[3], v[4], v[5]);
    if a.norm() < 1e-6 || b.norm() < 1e-6 || a.cross(&b).norm() < 1e-6 * a.norm() * b.norm() {
        return Err(schema(format!("{what}: degenerate rotation encoding")));
    }
    Ok(rot6d_decode(v))
}

fn decode_vec(v: &[f64; 3], what: &str) -> Result<Vector3<f64>, RecordError> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(schema(format!("{what}: non-finite translation")));
    }
    Ok(Vector3::from(*v))
}

fn check_count(what: &str, got: usize, expected: usize) -> Result<(), RecordError> {
    if got == expected {
        Ok(())
    } else {
        Err(schema(format!("{what} has {got} entries, expected {expected}")))
    }
}

fn flag(v: u8, what: &str) -> Result<bool, RecordError> {
    match v {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(schema(format!("{what}: flag must be 0 or 1, got {v}"))),
    }
}

impl WireRecord {
    fn into_record(self) -> Result<SequenceRecord, RecordError> {
        let t = self.frames;
        if t == 0 {
            return Err(schema("T must be positive"));
        }
        if self.fps != RECORD_FPS {
            return Err(schema(format!("fps must be {RECORD_FPS}, got {}", self.fps)));
        }
        check_count("beta", self.beta.len(), SHAPE_DIM)?;
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(schema("beta: non-finite value"));
        }
        check_count("root_t", self.root_t.len(), t)?;
        check_count("root_R", self.root_r.len(), t)?;
        check_count("joints", self.joints.len(), t)?;
        check_count("contacts", self.contacts.len(), t)?;

        let mut frames = Vec::with_capacity(t);
        for i in 0..t {
            check_count(&format!("joints[{i}]"), self.joints[i].len(), NUM_BODY_JOINTS)?;
            frames.push(PoseFrame {
                root_translation: decode_vec(&self.root_t[i], "root_t")?,
                root_orientation: decode_rotation(&self.root_r[i], "root_R")?,
                joint_angles: self.joints[i]
                    .iter()
                    .map(|r| decode_rotation(r, "joints"))
                    .collect::<Result<_, _>>()?,
            });
        }
        let contacts = self
            .contacts
            .iter()
            .map(|c| Ok([flag(c[0], "contacts")?, flag(c[1], "contacts")?]))
            .collect::<Result<_, RecordError>>()?;

        let head = match self.head {
            Some(h) => {
                check_count("head_T", h.len(), t + 1)?;
                Some(
                    h.iter()
                        .map(|p| {
                            Ok(RigidTransform::new(
                                decode_rotation(&p.rotation, "head_T")?,
                                decode_vec(&p.t, "head_T")?,
                            ))
                        })
                        .collect::<Result<_, RecordError>>()?,
                )
            }
            None => None,
        };
        let hands = match self.hands {
            Some(h) => {
                check_count("hands", h.len(), t + 1)?;
                let decode = |w: &WireHand| -> Result<HandObservation, RecordError> {
                    Ok(HandObservation {
                        pose: RigidTransform::new(decode_rotation(&w.rotation, "hands")?, decode_vec(&w.t, "hands")?),
                        visible: flag(w.v, "hands")?,
                    })
                };
                Some(
                    h.iter()
                        .map(|pair| Ok([decode(&pair[0])?, decode(&pair[1])?]))
                        .collect::<Result<_, RecordError>>()?,
                )
            }
            None => None,
        };

        Ok(SequenceRecord {
            id: self.id,
            fps: self.fps,
            motion: MotionSequence {
                shape: ShapeParams::from_slice(&self.beta),
                frames,
            },
            contacts,
            head,
            hands,
        })
    }
}

/// Streaming reader yielding one result per non-blank line.
pub struct RecordReader<R> {
    lines: io::Lines<R>,
    line: usize,
}

impl<R: BufRead> RecordReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: reader.lines(),
            line: 0,
        }
    }
}

impl RecordReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self, RecordError> {
        let file = File::open(path).map_err(|source| RecordError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::new(BufReader::new(file)))
    }
}

impl<R: BufRead> Iterator for RecordReader<R> {
    type Item = Result<SequenceRecord, RecordError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = self.lines.next()?;
            self.line += 1;
            let line = self.line;
            let text = match text {
                Ok(t) => t,
                Err(e) => {
                    return Some(Err(RecordError::DecodeError {
                        line,
                        message: e.to_string(),
                    }))
                }
            };
            if text.trim().is_empty() {
                continue;
            }
            return Some(SequenceRecord::from_json_line(&text).map_err(|e| e.with_line(line)));
        }
    }
}

/// Loads every record. With `strict`, the first bad line aborts; otherwise
/// bad lines are skipped, logged and returned alongside the good records.
pub fn read_records(path: &Path, strict: bool) -> Result<(Vec<SequenceRecord>, Vec<RecordError>), RecordError> {
    let mut good = Vec::new();
    let mut bad = Vec::new();
    for item in RecordReader::open(path)? {
        match item {
            Ok(r) => good.push(r),
            Err(e) if strict => return Err(e),
            Err(e) => {
                log::warn!("{}: {e}", path.display());
                bad.push(e);
            }
        }
    }
    Ok((good, bad))
}

pub fn write_records<'a>(path: &Path, records: impl IntoIterator<Item = &'a SequenceRecord>) -> Result<(), RecordError> {
    let io_err = |source| RecordError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut out = BufWriter::new(file);
    for r in records {
        writeln!(out, "{}", r.to_json_line()).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}
