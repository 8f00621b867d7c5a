//! The `hamos` workflows as plain functions: synthetic data, visibility
//! augmentation, training, sampling and evaluation.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device};
use hamos_core::augmentation::{augment_sequence, FovPreset};
use hamos_core::conditioning::HandObservation;
use hamos_core::metrics::{evaluate_sequence, MetricAccumulator, MetricReport};
use hamos_core::record::{read_records, write_records, RecordError, SequenceRecord, RECORD_FPS};
use hamos_core::schedule::NoiseSchedule;
use hamos_core::seed::{sequence_seed, stream_seed};
use hamos_core::skeleton::KinematicTree;
use hamos_core::synth::{detect_contacts, generate_dataset};
use hamos_model::checkpoint::Checkpoint;
use hamos_model::data::{head_track, true_hands_in_head, TrainingSequence};
use hamos_model::sampler::{sample_motion, Observations, SampleOptions};
use hamos_model::train::Trainer;
use hamos_model::{ConfigError, LossReport, ModelError, RunConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENV_SEED: &str = "HAMOS_SEED";

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input: arguments, configuration or file contents.
    #[error("{0}")]
    Validation(String),
    /// Failure while doing the work.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<RecordError> for CliError {
    fn from(e: RecordError) -> Self {
        match e {
            RecordError::Io { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(c) => c.into(),
            ModelError::Checkpoint(_) => CliError::Validation(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn with_id(id: &str) -> impl Fn(ModelError) -> CliError + '_ {
    move |e| match CliError::from(e) {
        CliError::Validation(m) => CliError::Validation(format!("{id}: {m}")),
        CliError::Runtime(m) => CliError::Runtime(format!("{id}: {m}")),
    }
}

fn io_error(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Seed precedence: explicit flag, then `HAMOS_SEED`, then the fallback.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>, fallback: u64) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match env {
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Validation(format!("{ENV_SEED}={v:?} is not an unsigned integer"))),
        None => Ok(fallback),
    }
}

fn load(path: &Path, strict: bool) -> Result<Vec<SequenceRecord>, CliError> {
    let (records, errors) = read_records(path, strict)?;
    if !errors.is_empty() {
        log::warn!("{}: skipped {} malformed record(s)", path.display(), errors.len());
    }
    Ok(records)
}

/// Writes `count` synthetic sequences with lengths in `lengths`.
pub fn gen_data(out: &Path, count: usize, lengths: std::ops::RangeInclusive<usize>, seed: u64) -> Result<(), CliError> {
    if lengths.is_empty() || *lengths.start() == 0 {
        return Err(CliError::Validation(format!("invalid length range {lengths:?}")));
    }
    let tree = KinematicTree::default_tree();
    let records: Vec<SequenceRecord> = generate_dataset(tree, count, lengths, seed).collect();
    write_records(out, &records)?;
    Ok(())
}

/// Ground-truth hand poses over `0..=T` for a record, from its observations
/// when present and forward kinematics otherwise.
fn hand_track(tree: &KinematicTree, record: &SequenceRecord, head: &[hamos_core::geometry::RigidTransform]) -> [Vec<hamos_core::geometry::RigidTransform>; 2] {
    if let Some(h) = &record.hands {
        return [0, 1].map(|i| h.iter().map(|f| f[i].pose).collect());
    }
    let mut poses = true_hands_in_head(tree, &record.motion, head);
    for p in poses.iter_mut() {
        p.insert(0, p[0]);
    }
    poses
}

/// Adds simulated hand visibility to every record. Each sequence draws from
/// its own generator so the result does not depend on processing order.
pub fn augment(input: &Path, out: &Path, seed: u64, preset: FovPreset, strict: bool) -> Result<usize, CliError> {
    let tree = KinematicTree::default_tree();
    let records = load(input, strict)?;
    let base = stream_seed(seed, "augment");
    let mut outputs = Vec::with_capacity(records.len());
    for (i, rec) in records.into_iter().enumerate() {
        let head = head_track(tree, &rec);
        let poses = hand_track(tree, &rec, &head);
        let mut rng = ChaCha8Rng::seed_from_u64(sequence_seed(base, i as u64));
        let hands = augment_sequence([&poses[0], &poses[1]], preset, &mut rng)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", rec.id)))?;
        outputs.push(SequenceRecord {
            head: Some(head),
            hands: Some(hands),
            ..rec
        });
    }
    write_records(out, &outputs)?;
    Ok(outputs.len())
}

pub struct TrainRequest<'a> {
    pub config: RunConfig,
    pub data: &'a Path,
    pub ckpt: &'a Path,
    pub steps: Option<usize>,
    pub resume: Option<&'a Path>,
    pub strict: bool,
}

/// Trains on a record file and writes a checkpoint at the end.
pub fn train(req: TrainRequest<'_>) -> Result<LossReport, CliError> {
    let tree = KinematicTree::default_tree();
    let records = load(req.data, req.strict)?;
    if records.is_empty() {
        return Err(CliError::Validation(format!("{}: no training records", req.data.display())));
    }
    let data: Vec<TrainingSequence> = records
        .iter()
        .map(|r| TrainingSequence::from_record(tree, r).map_err(with_id(&r.id)))
        .collect::<Result<_, _>>()?;
    let device = Device::Cpu;
    let mut trainer = match req.resume {
        Some(p) => {
            let ck = Checkpoint::load(p, &device)?;
            if ck.config.hash() != req.config.hash() {
                return Err(CliError::Validation("resume checkpoint was trained with a different configuration".into()));
            }
            ck.into_trainer(&device)?
        }
        None => Trainer::new(req.config, DType::F32, &device)?,
    };
    let total = req.steps.unwrap_or(trainer.config.train.steps) as u64;
    let remaining = total.saturating_sub(trainer.step()) as usize;
    log::info!("training {} parameters for {remaining} step(s)", trainer.model.num_parameters());
    let report = trainer.train(&data, remaining)?;
    Checkpoint::from_trainer(&trainer)?.save(req.ckpt)?;
    Ok(report)
}

pub struct SampleRequest<'a> {
    pub ckpt: &'a Path,
    pub obs: &'a Path,
    pub out: &'a Path,
    pub guidance: bool,
    pub steps: Option<usize>,
    pub seed: u64,
    pub timings: Option<&'a Path>,
    pub strict: bool,
}

/// Per-sequence wall-clock sampling time, kept apart from the predictions so
/// those stay byte-identical across runs.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Timings {
    pub seconds: HashMap<String, f64>,
}

/// Samples one motion per observation record.
pub fn sample(req: SampleRequest<'_>) -> Result<usize, CliError> {
    let tree = KinematicTree::default_tree();
    let device = Device::Cpu;
    let ck = Checkpoint::load(req.ckpt, &device)?;
    let model = ck.sampling_model(&device)?;
    let schedule = NoiseSchedule::cosine(ck.config.diffusion.steps);
    let steps = req.steps.unwrap_or(ck.config.diffusion.sample_steps);
    if steps == 0 || steps > schedule.steps() {
        return Err(CliError::Validation(format!("--steps must be in 1..={}", schedule.steps())));
    }
    let guidance = req.guidance.then(|| ck.config.guidance.solver());
    let base = stream_seed(req.seed, "sample");
    let records = load(req.obs, req.strict)?;
    let mut preds = Vec::with_capacity(records.len());
    let mut timings = Timings::default();
    for (i, rec) in records.iter().enumerate() {
        let (Some(head), Some(hands)) = (&rec.head, &rec.hands) else {
            return Err(CliError::Validation(format!("{}: observation record has no head or hand track", rec.id)));
        };
        let obs = Observations {
            head: head.clone(),
            hands: hands.clone(),
        };
        let opts = SampleOptions {
            steps,
            guidance,
            seed: sequence_seed(base, i as u64),
        };
        let out = sample_motion(&model, &schedule, tree, &obs, &opts).map_err(with_id(&rec.id))?;
        timings.seconds.insert(rec.id.clone(), out.runtime);
        let contacts = detect_contacts(&tree.motion_joints(&out.motion), RECORD_FPS);
        preds.push(SequenceRecord {
            id: rec.id.clone(),
            fps: RECORD_FPS,
            motion: out.motion,
            contacts,
            head: None,
            hands: None,
        });
    }
    write_records(req.out, &preds)?;
    if let Some(path) = req.timings {
        let text = serde_json::to_string_pretty(&timings).expect("timings serialize");
        std::fs::write(path, text).map_err(io_error(path))?;
    }
    Ok(preds.len())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceReport {
    pub id: String,
    #[serde(flatten)]
    pub metrics: MetricReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub aggregate: MetricReport,
    pub sequences: Vec<SequenceReport>,
}

/// Visibility per output frame; all hands count as hidden without
/// observations.
fn visibility_of(record: Option<&SequenceRecord>, frames: usize) -> Vec<[bool; 2]> {
    match record.and_then(|r| r.hands.as_ref()) {
        Some(h) => h[1..].iter().map(|f: &[HandObservation; 2]| [f[0].visible, f[1].visible]).collect(),
        None => vec![[false; 2]; frames],
    }
}

/// Metrics of predictions against ground truth, matched by id.
pub fn evaluate(pred: &[SequenceRecord], gt: &[SequenceRecord], obs: &[SequenceRecord], timings: Option<&Timings>) -> Result<EvalReport, CliError> {
    let tree = KinematicTree::default_tree();
    let gt: HashMap<&str, &SequenceRecord> = gt.iter().map(|r| (r.id.as_str(), r)).collect();
    let obs: HashMap<&str, &SequenceRecord> = obs.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut total = MetricAccumulator::new();
    let mut sequences = Vec::with_capacity(pred.len());
    for p in pred {
        let g = gt
            .get(p.id.as_str())
            .ok_or_else(|| CliError::Validation(format!("{}: no ground truth with this id", p.id)))?;
        let o = obs.get(p.id.as_str()).copied();
        if o.is_none() {
            return Err(CliError::Validation(format!("{}: no observation record with this id", p.id)));
        }
        let vis = visibility_of(o, g.num_frames());
        let mut acc = evaluate_sequence(tree, &p.motion, &g.motion, &vis, RECORD_FPS)
            .map_err(|e| CliError::Validation(format!("{}: {e}", p.id)))?;
        if let Some(t) = timings.and_then(|t| t.seconds.get(&p.id)) {
            acc.add_runtime(*t);
        }
        total.merge(&acc);
        sequences.push(SequenceReport {
            id: p.id.clone(),
            metrics: acc.report(),
        });
    }
    Ok(EvalReport {
        aggregate: total.report(),
        sequences,
    })
}

pub struct EvalRequest<'a> {
    pub pred: &'a Path,
    pub gt: &'a Path,
    pub obs: &'a Path,
    pub report: &'a Path,
    pub timings: Option<&'a Path>,
    pub strict: bool,
}

pub fn eval(req: EvalRequest<'_>) -> Result<EvalReport, CliError> {
    let timings = match req.timings {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(io_error(p))?;
            Some(serde_json::from_str::<Timings>(&text).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?)
        }
        None => None,
    };
    let report = evaluate(
        &load(req.pred, req.strict)?,
        &load(req.gt, req.strict)?,
        &load(req.obs, req.strict)?,
        timings.as_ref(),
    )?;
    let text = serde_json::to_string_pretty(&report).expect("reports serialize");
    std::fs::write(req.report, text).map_err(io_error(req.report))?;
    Ok(report)
}

/// Files produced by [`end_to_end`].
#[derive(Debug, Clone)]
pub struct PipelineOutputs {
    pub observations: PathBuf,
    pub predictions: PathBuf,
    pub report_path: PathBuf,
    pub report: EvalReport,
}

/// Ground truth → augmented observations → samples → report, all inside
/// `workdir`.
pub fn end_to_end(gt: &Path, ckpt: &Path, workdir: &Path, seed: u64, preset: FovPreset, guidance: bool, steps: Option<usize>) -> Result<PipelineOutputs, CliError> {
    std::fs::create_dir_all(workdir).map_err(io_error(workdir))?;
    let observations = workdir.join("obs.jsonl");
    let predictions = workdir.join("pred.jsonl");
    let report_path = workdir.join("report.json");
    augment(gt, &observations, seed, preset, false)?;
    sample(SampleRequest {
        ckpt,
        obs: &observations,
        out: &predictions,
        guidance,
        steps,
        seed,
        timings: None,
        strict: false,
    })?;
    let report = eval(EvalRequest {
        pred: &predictions,
        gt,
        obs: &observations,
        report: &report_path,
        timings: None,
        strict: false,
    })?;
    Ok(PipelineOutputs {
        observations,
        predictions,
        report_path,
        report,
    })
}
