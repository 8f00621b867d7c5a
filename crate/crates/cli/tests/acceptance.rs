//! End-to-end acceptance checks. Runs as a plain binary and prints one
//! PASS/FAIL line per criterion; exits non-zero if any fails.

use std::path::Path;
use std::time::Instant;

use candle_core::{DType, Device, Tensor, Var};
use hamos_cli::{end_to_end, gen_data, EvalReport};
use hamos_core::augmentation::{is_visible, sample_drops, sample_fov, DropSpec, FovPreset};
use hamos_core::conditioning::{build_raw_features, HandObservation};
use hamos_core::geometry::{canonical_frames, canonicalize, yaw_rotation, RigidTransform, Rotation};
use hamos_core::guidance::{frame_objective, hand_gradient, perturb_arm, HandTarget};
use hamos_core::metrics::jerk_of_track;
use hamos_core::record::read_records;
use hamos_core::skeleton::{KinematicTree, MotionSequence, PoseFrame, ShapeParams, ARM_JOINTS, NUM_BODY_JOINTS, WRIST_JOINTS};
use hamos_model::checkpoint::Checkpoint;
use hamos_model::config::{ModelConfig, RunConfig};
use hamos_model::data::TrainingSequence;
use hamos_model::kinematics::BodyModel;
use hamos_model::layers::{Attention, Rotary};
use hamos_model::losses::{loss_pos, loss_shape, loss_simple, loss_skat};
use hamos_model::network::HamosModel;
use hamos_model::params::ParamStore;
use hamos_model::train::Trainer;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 1

/// Ellipse test written out independently: powers through exp/ln.
fn ellipse_level(yaw: f64, pitch: f64, c: (f64, f64), h: (f64, f64), p: f64) -> f64 {
    let term = |a: f64, center: f64, half: f64| {
        let u = ((a - center) / half).abs();
        if u == 0.0 {
            0.0
        } else {
            (p * u.ln()).exp()
        }
    };
    term(yaw, c.0, h.0) + term(pitch, c.1, h.1)
}

fn fov_grid() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut agree, mut total, mut skipped) = (0usize, 0usize, 0usize);
    for _ in 0..100 {
        let fov = sample_fov(&mut rng).map_err(|e| e.to_string())?;
        for i in 0..181 {
            let yaw = -std::f64::consts::PI + i as f64 * std::f64::consts::PI / 90.0;
            for j in 0..181 {
                let pitch = -std::f64::consts::FRAC_PI_2 + j as f64 * std::f64::consts::PI / 180.0;
                let level = ellipse_level(yaw, pitch, (fov.center_x, fov.center_y), (fov.half_x, fov.half_y), fov.power);
                if (level - 1.0).abs() < 1e-9 {
                    skipped += 1;
                    continue;
                }
                total += 1;
                if is_visible(yaw, pitch, &fov) == (level <= 1.0) {
                    agree += 1;
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        agree == total && secs < 60.0,
        format!("{agree}/{total} cells agree ({skipped} boundary cells skipped), {secs:.1} s"),
    )
}

// ---------------------------------------------------------------- 2

/// Knuth's multiplication method; fine for the small rates used here.
fn poisson_draw(rng: &mut ChaCha8Rng, lambda: f64) -> usize {
    let limit = (-lambda).exp();
    let mut k = 0;
    let mut prod: f64 = rng.random();
    while prod > limit {
        k += 1;
        prod *= rng.random::<f64>();
    }
    k
}

fn normal_draw(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Long-mode drop fraction simulated from scratch: Poisson event count,
/// log-normal durations (mean 28, std 25) rounded and clipped at 5 frames,
/// uniform starts, truncation at the sequence end, union of events.
fn drop_fraction_oracle(frames: usize, ratio: f64, sequences: usize, rng: &mut ChaCha8Rng) -> f64 {
    let (mean, std) = (28.0f64, 25.0f64);
    let sigma2 = (1.0 + (std / mean).powi(2)).ln();
    let mu = mean.ln() - sigma2 / 2.0;
    let lambda = frames as f64 * ratio / mean;
    let mut dropped = 0usize;
    for _ in 0..sequences {
        let mut mask = vec![false; frames];
        for _ in 0..poisson_draw(rng, lambda) {
            let d = (mu + sigma2.sqrt() * normal_draw(rng)).exp().round().max(5.0) as usize;
            let s = rng.random_range(0..frames);
            for m in mask.iter_mut().skip(s).take(d) {
                *m = true;
            }
        }
        dropped += mask.iter().filter(|m| **m).count();
    }
    dropped as f64 / (sequences * frames) as f64
}

/// Same expectation without sampling: a frame is covered by a Poisson
/// number of events with mean `λ·q_i`.
fn drop_fraction_analytic(frames: usize, ratio: f64) -> f64 {
    let (mean, std) = (28.0f64, 25.0f64);
    let sigma2 = (1.0 + (std / mean).powi(2)).ln();
    let normal = Normal::new(mean.ln() - sigma2 / 2.0, sigma2.sqrt()).unwrap();
    let lambda = frames as f64 * ratio / mean;
    // P(duration > m)
    let longer = |m: usize| if m < 5 { 1.0 } else { 1.0 - normal.cdf((m as f64 + 0.5).ln()) };
    let mut sum = 0.0;
    let mut cover = 0.0;
    for m in 0..frames {
        cover += longer(m);
        sum += 1.0 - (-lambda * cover / frames as f64).exp();
    }
    sum / frames as f64
}

fn drop_statistics() -> Outcome {
    let start = Instant::now();
    let (frames, n) = (512, 10_000);
    let spec = DropSpec::long(0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let dropped: usize = (0..n).map(|_| sample_drops(frames, &spec, &mut rng).iter().filter(|m| **m).count()).sum();
    let empirical = dropped as f64 / (n * frames) as f64;
    let oracle = drop_fraction_oracle(frames, 0.1, n, &mut ChaCha8Rng::seed_from_u64(203));
    let analytic = drop_fraction_analytic(frames, 0.1);
    let secs = start.elapsed().as_secs_f64();
    check(
        (empirical - oracle).abs() <= 0.03 && secs < 120.0,
        format!("empirical {empirical:.4}, Monte Carlo oracle {oracle:.4}, analytic {analytic:.4}, {secs:.1} s"),
    )
}

// ---------------------------------------------------------------- 3

fn poisson_rate() -> Outcome {
    let lambda = DropSpec::short(0.1).poisson_rate(300);
    check(lambda == 15.0, format!("λ = {lambda:?}"))
}

// ---------------------------------------------------------------- 4

fn random_rotation(rng: &mut ChaCha8Rng, max_angle: f64) -> Rotation {
    let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    Rotation::new(v.normalize() * rng.random_range(0.0..max_angle))
}

fn random_head(rng: &mut ChaCha8Rng) -> RigidTransform {
    // keep the face away from straight up or down
    let facing = yaw_rotation(rng.random_range(-3.1..3.1)) * Rotation::new(Vector3::new(rng.random_range(-1.2..1.2), 0.0, 0.0));
    let t = Vector3::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), rng.random_range(0.8..2.0));
    RigidTransform::new(facing * random_rotation(rng, 0.3), t)
}

fn rotation_gap(a: &Rotation, b: &Rotation) -> f64 {
    (a.matrix() - b.matrix()).abs().max()
}

fn invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let heads: Vec<RigidTransform> = (0..5).map(|_| random_head(&mut rng)).collect();
        let hands: Vec<[HandObservation; 2]> = heads
            .iter()
            .map(|_| {
                [0, 1].map(|_| HandObservation {
                    pose: RigidTransform::new(
                        random_rotation(&mut rng, 3.0),
                        Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(0.0..0.6), rng.random_range(-0.8..0.0)),
                    ),
                    visible: rng.random_bool(0.5),
                })
            })
            .collect();
        let g = RigidTransform::new(
            yaw_rotation(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)),
            Vector3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), 0.0),
        );
        let moved: Vec<RigidTransform> = heads.iter().map(|h| g.compose(h)).collect();

        let a = build_raw_features(&heads, &hands).map_err(|e| e.to_string())?;
        let b = build_raw_features(&moved, &hands).map_err(|e| e.to_string())?;
        for (x, y) in a.iter().zip(&b) {
            for (p, q) in x.to_vector().iter().zip(y.to_vector().iter()) {
                worst = worst.max((p - q).abs());
            }
        }

        let fa = canonical_frames(&heads).map_err(|e| e.to_string())?;
        let fb = canonical_frames(&moved).map_err(|e| e.to_string())?;
        for (x, y) in fa.iter().zip(&fb) {
            worst = worst.max(g.compose(&x.transform).max_deviation(&y.transform));
        }

        // canonical poses of a moved body are unchanged
        let motion = MotionSequence {
            shape: ShapeParams::zeros(),
            frames: heads
                .iter()
                .map(|h| PoseFrame {
                    root_translation: h.translation,
                    root_orientation: random_rotation(&mut rng, 3.0),
                    joint_angles: vec![Rotation::identity(); NUM_BODY_JOINTS],
                })
                .collect(),
        };
        let mut shifted = motion.clone();
        for f in &mut shifted.frames {
            f.root_orientation = g.rotation * f.root_orientation;
            f.root_translation = g.transform_point(&f.root_translation);
        }
        let ca = canonicalize(&motion, &fa).map_err(|e| e.to_string())?;
        let cb = canonicalize(&shifted, &fb).map_err(|e| e.to_string())?;
        for (x, y) in ca.iter().zip(&cb) {
            worst = worst.max(rotation_gap(&x.root_to_cano, &y.root_to_cano));
        }
    }
    check(worst < 1e-5, format!("max deviation {worst:.2e} over 1000 transforms"))
}

// ---------------------------------------------------------------- 5

const FD_STEP: f64 = 1e-6;

fn tensor(v: Vec<f64>, shape: &[usize]) -> Tensor {
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, r: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-r..r)).collect()
}

/// Relative error between autodiff and central differences on `probes`.
fn autodiff_error(x: &[f64], shape: &[usize], probes: &[usize], f: &dyn Fn(&Tensor) -> Tensor) -> f64 {
    let var = Var::from_tensor(&tensor(x.to_vec(), shape)).unwrap();
    let grads = f(var.as_tensor()).backward().unwrap();
    let g = grads.get(var.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
    let eval = |x: Vec<f64>| f(&tensor(x, shape)).to_scalar::<f64>().unwrap();
    let (mut num, mut fd_norm, mut g_norm) = (0.0, 0.0, 0.0);
    for &i in probes {
        let (mut plus, mut minus) = (x.to_vec(), x.to_vec());
        plus[i] += FD_STEP;
        minus[i] -= FD_STEP;
        let fd = (eval(plus) - eval(minus)) / (2.0 * FD_STEP);
        num += (fd - g[i]).powi(2);
        fd_norm += fd * fd;
        g_norm += g[i] * g[i];
    }
    num.sqrt() / fd_norm.sqrt().max(g_norm.sqrt()).max(1e-12)
}

fn random_pose(rng: &mut ChaCha8Rng) -> PoseFrame {
    PoseFrame {
        root_translation: Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.9),
        root_orientation: random_rotation(rng, 3.0),
        joint_angles: (0..NUM_BODY_JOINTS).map(|_| random_rotation(rng, 0.8)).collect(),
    }
}

fn guidance_error(rng: &mut ChaCha8Rng, tree: &KinematicTree) -> f64 {
    let predicted = random_pose(rng);
    let mut refined = predicted.clone();
    for j in ARM_JOINTS.iter().flatten() {
        refined.joint_angles[j - 1] *= random_rotation(rng, 0.3);
    }
    let shape = ShapeParams::from_slice(&uniform(rng, 16, 2.0));
    let targets = [0, 1].map(|_| HandTarget {
        position: Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.5..1.8)),
        visible: rng.random_bool(0.8),
    });
    let alpha_bar = rng.random_range(0.05..0.95);
    let scale = 8.0;
    let wrists = tree.forward_kinematics(&predicted, &shape);
    let (mut num, mut fd_norm, mut g_norm) = (0.0, 0.0, 0.0);
    for hand in 0..2 {
        let g = hand_gradient(tree, &refined, &wrists[WRIST_JOINTS[hand]], &shape, hand, &targets[hand], alpha_bar, scale);
        for i in 0..g.len() {
            let mut d = [0.0; 12];
            d[i] = FD_STEP;
            let plus = frame_objective(tree, &perturb_arm(&refined, hand, &d), &predicted, &shape, &targets, alpha_bar, scale);
            d[i] = -FD_STEP;
            let minus = frame_objective(tree, &perturb_arm(&refined, hand, &d), &predicted, &shape, &targets, alpha_bar, scale);
            let fd = (plus - minus) / (2.0 * FD_STEP);
            num += (fd - g[i]).powi(2);
            fd_norm += fd * fd;
            g_norm += g[i] * g[i];
        }
    }
    num.sqrt() / fd_norm.sqrt().max(g_norm.sqrt()).max(1e-12)
}

fn gradient_checks() -> Outcome {
    let tree = KinematicTree::default_tree();
    let body = BodyModel::new(tree, DType::F64, &Device::Cpu).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst = [0.0f64; 5];
    let frames = 2;
    let n = frames * 132;
    for _ in 0..50 {
        let mut canonical = Vec::new();
        for _ in 0..frames {
            let a: f64 = rng.random_range(-3.0..3.0);
            canonical.extend([a.cos(), -a.sin(), 0.0, a.sin(), a.cos(), 0.0, 0.0, 0.0, 1.0]);
        }
        let canonical = tensor(canonical, &[1, frames, 3, 3]);
        let head = tensor(uniform(&mut rng, frames * 3, 1.5), &[1, frames, 3]);
        let offsets = body.bone_offsets(&tensor(uniform(&mut rng, 16, 2.0), &[1, 16])).unwrap();
        let gt = tensor(uniform(&mut rng, frames * 66, 1.5), &[1, frames, 22, 3]);
        let contacts = tensor((0..frames * 2).map(|_| rng.random_bool(0.6) as u8 as f64).collect(), &[1, frames, 2]);
        let features = uniform(&mut rng, n, 1.0);
        let target = tensor(uniform(&mut rng, n, 1.0), &[1, frames, 132]);
        let probes: Vec<usize> = (0..24).map(|_| rng.random_range(0..n)).collect();
        let shape = [1, frames, 132];

        let e = autodiff_error(&features, &shape, &probes, &|x| loss_simple(&target, x).unwrap());
        worst[0] = worst[0].max(e);
        let e = autodiff_error(&features, &shape, &probes, &|x| {
            let j = body.aligned_joints(x, &canonical, &head, &offsets).unwrap();
            loss_pos(&j, &gt).unwrap().sum_all().unwrap()
        });
        worst[2] = worst[2].max(e);
        let e = autodiff_error(&features, &shape, &probes, &|x| {
            let j = body.aligned_joints(x, &canonical, &head, &offsets).unwrap();
            loss_skat(&j, &contacts).unwrap().sum_all().unwrap()
        });
        worst[3] = worst[3].max(e);
        let truth = tensor(uniform(&mut rng, 16, 3.0), &[1, 16]);
        let guess = uniform(&mut rng, 16, 3.0);
        let all: Vec<usize> = (0..16).collect();
        let e = autodiff_error(&guess, &[1, 16], &all, &|x| loss_shape(&body, &truth, x).unwrap());
        worst[1] = worst[1].max(e);
        worst[4] = worst[4].max(guidance_error(&mut rng, tree));
    }
    let ok = worst.iter().all(|e| *e < 1e-4);
    check(
        ok,
        format!(
            "worst relative error over 50 configs: simple {:.1e}, shape {:.1e}, pos {:.1e}, skating {:.1e}, guidance {:.1e}",
            worst[0], worst[1], worst[2], worst[3], worst[4]
        ),
    )
}

// ---------------------------------------------------------------- 6

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    tensor(uniform(rng, n, 1.0), shape)
}

fn frame_of(x: &Tensor, t: usize) -> Vec<f64> {
    x.narrow(1, t, 1).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap()
}

fn replace_frame(x: &Tensor, t: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let (_, len, d) = x.dims3().unwrap();
    let mut parts = Vec::new();
    if t > 0 {
        parts.push(x.narrow(1, 0, t).unwrap());
    }
    parts.push(random_tensor(rng, &[1, 1, d]));
    if t + 1 < len {
        parts.push(x.narrow(1, t + 1, len - t - 1).unwrap());
    }
    Tensor::cat(&parts, 1).unwrap()
}

fn attention_locality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let (len, dim, window) = (300, 16, 63);
    let mut ps = ParamStore::new(1, DType::F64, Device::Cpu);
    let attn = Attention::new(&mut ps, "attn", dim, 2, window).map_err(|e| e.to_string())?;
    let rotary = Rotary::new(len, dim / 2, DType::F64, &Device::Cpu).map_err(|e| e.to_string())?;
    let x = random_tensor(&mut rng, &[1, len, dim]);
    let base = attn.forward(&x, &x, &rotary).unwrap();
    let mut single = 0;
    for t in [0, 63, 64, 150, 236, 299] {
        for other in (0..len).filter(|o| o.abs_diff(t) > window).step_by(17) {
            let y = replace_frame(&x, other, &mut rng);
            if frame_of(&attn.forward(&y, &y, &rotary).unwrap(), t) != frame_of(&base, t) {
                return Err(format!("single layer: frame {t} moved when frame {other} changed"));
            }
            single += 1;
        }
    }

    let mut stacked = Vec::new();
    for layers in [2, 3] {
        let w = 10;
        let cfg = ModelConfig {
            dim: 16,
            heads: 2,
            encoder_layers: 1,
            decoder_layers: layers,
            window: w,
            ffn_mult: 2,
        };
        let model = HamosModel::new(&cfg, 9, DType::F64, &Device::Cpu).map_err(|e| e.to_string())?;
        for (_, v) in model.vars() {
            v.set(&(random_tensor(&mut rng, v.dims()) * 0.3).unwrap()).unwrap();
        }
        let len = 100;
        let noisy = random_tensor(&mut rng, &[1, len, 132]);
        let shape = random_tensor(&mut rng, &[1, 16]);
        let summaries = random_tensor(&mut rng, &[1, len, 16]);
        let base = model.decoder.forward(&noisy, &[300], &shape, &summaries).unwrap();
        let t = 10;
        let reach = layers * w;
        for other in (t + reach + 1)..len {
            let y = replace_frame(&noisy, other, &mut rng);
            let out = model.decoder.forward(&y, &[300], &shape, &summaries).unwrap();
            if frame_of(&out, t) != frame_of(&base, t) {
                return Err(format!("{layers} layers: frame {t} moved when frame {other} changed"));
            }
        }
        stacked.push(format!("L={layers} receptive field ≤ {reach}"));
    }
    Ok(format!("{single} single-layer perturbations beyond W=63 left outputs bit-identical; {}", stacked.join(", ")))
}

// ---------------------------------------------------------------- 7, 8, 9, 10

/// Desk-scale configuration for the training experiments.
fn overfit_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.model.dim = 64;
    c.model.heads = 4;
    c.model.encoder_layers = 2;
    c.model.decoder_layers = 2;
    c.train.lr = 1e-3;
    c.train.weight_decay = 0.0;
    c.train.ema_rate = 0.999;
    c.train.warmup_steps = 100;
    c.train.batch_size = 8;
    c.train.max_len = 128;
    c.seed = 17;
    c
}

const MAX_STEPS: usize = 20_000;
const EVAL_EVERY: usize = 1000;
const EVAL_SEED: u64 = 33;

struct Overfit {
    outcome: Outcome,
    ckpt: std::path::PathBuf,
}

fn overfit(dir: &Path) -> Overfit {
    let ckpt = dir.join("overfit.ckpt");
    let run = || -> Outcome {
        let start = Instant::now();
        let gt = dir.join("train.jsonl");
        gen_data(&gt, 8, 128..=128, 7).map_err(|e| e.to_string())?;
        let tree = KinematicTree::default_tree();
        let (records, _) = read_records(&gt, true).map_err(|e| e.to_string())?;
        let data = records
            .iter()
            .map(|r| TrainingSequence::from_record(tree, r))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let mut trainer = Trainer::new(overfit_config(), DType::F32, &Device::Cpu).map_err(|e| e.to_string())?;
        let mut last = String::new();
        while (trainer.step() as usize) < MAX_STEPS {
            let loss = trainer.train(&data, EVAL_EVERY).map_err(|e| e.to_string())?;
            Checkpoint::from_trainer(&trainer)
                .and_then(|c| c.save(&ckpt))
                .map_err(|e| e.to_string())?;
            let out = end_to_end(&gt, &ckpt, &dir.join("overfit_eval"), EVAL_SEED, FovPreset::Random, true, None)
                .map_err(|e| e.to_string())?;
            let a = &out.report.aggregate;
            let hand = a.vis_hand_pe.unwrap_or(f64::INFINITY);
            let hours = start.elapsed().as_secs_f64() / 3600.0;
            last = format!(
                "step {}: loss {:.5}, MPJPE {:.1} mm, Vis Hand PE {:.1} mm, {:.2} h",
                trainer.step(),
                loss.total,
                a.mpjpe,
                hand,
                hours
            );
            eprintln!("  overfit {last}");
            if a.mpjpe < 30.0 && hand < 40.0 {
                return check(hours < 4.0, last);
            }
        }
        Err(last)
    };
    Overfit { outcome: run(), ckpt }
}

fn held_out(dir: &Path, ckpt: &Path) -> Result<(EvalReport, EvalReport), String> {
    let gt = dir.join("held_out.jsonl");
    gen_data(&gt, 20, 128..=128, 8).map_err(|e| e.to_string())?;
    let run = |guided: bool, name: &str| {
        end_to_end(&gt, ckpt, &dir.join(name), EVAL_SEED, FovPreset::Random, guided, None)
            .map(|o| o.report)
            .map_err(|e| e.to_string())
    };
    Ok((run(true, "guided")?, run(false, "unguided")?))
}

fn guidance_efficacy(guided: &EvalReport, plain: &EvalReport) -> Outcome {
    let (g, p) = (&guided.aggregate, &plain.aggregate);
    let (Some(gh), Some(ph)) = (g.vis_hand_pe, p.vis_hand_pe) else {
        return Err("no visible hands in the held-out observations".into());
    };
    let mut wins = 0;
    let mut paired = 0;
    for (a, b) in guided.sequences.iter().zip(&plain.sequences) {
        if let (Some(x), Some(y)) = (a.metrics.vis_hand_pe, b.metrics.vis_hand_pe) {
            paired += 1;
            wins += (x < y) as usize;
        }
    }
    let jerk_change = (g.jerk - p.jerk).abs() / p.jerk;
    check(
        gh < ph && jerk_change < 0.1 && guided.sequences.len() >= 20,
        format!(
            "Vis Hand PE {gh:.1} mm guided vs {ph:.1} mm unguided ({wins}/{paired} sequences better); jerk {:.4} vs {:.4} ({:.1}% change)",
            g.jerk,
            p.jerk,
            100.0 * jerk_change
        ),
    )
}

fn shape_consistency(reports: &[&EvalReport]) -> Outcome {
    let worst = reports
        .iter()
        .flat_map(|r| r.sequences.iter())
        .map(|s| s.metrics.height_std.max(s.metrics.span_std))
        .fold(0.0f64, f64::max);
    let n: usize = reports.iter().map(|r| r.sequences.len()).sum();
    check(worst == 0.0, format!("max height/span std {worst} cm over {n} sampled sequences"))
}

fn determinism(dir: &Path, ckpt: &Path) -> Outcome {
    let gt = dir.join("determinism.jsonl");
    gen_data(&gt, 3, 48..=64, 9).map_err(|e| e.to_string())?;
    let run = |name: &str| -> Result<Vec<u8>, String> {
        let out = end_to_end(&gt, ckpt, &dir.join(name), 5, FovPreset::Random, true, None).map_err(|e| e.to_string())?;
        std::fs::read(&out.predictions).map_err(|e| e.to_string())
    };
    let (a, b) = (run("first")?, run("second")?);
    check(a == b && !a.is_empty(), format!("two runs wrote {} and {} bytes, identical: {}", a.len(), b.len(), a == b))
}

// ---------------------------------------------------------------- 11

fn jerk_exactness() -> Outcome {
    let fps = 30.0;
    let mut rng = ChaCha8Rng::seed_from_u64(1111);
    let mut worst_quadratic = 0.0f64;
    for _ in 0..100 {
        let c: Vec<Vector3<f64>> = (0..3)
            .map(|_| Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
            .collect();
        let track: Vec<Vec<Vector3<f64>>> = (0..60)
            .map(|k| {
                let t = k as f64 / fps;
                vec![c[0] + c[1] * t + c[2] * t * t]
            })
            .collect();
        worst_quadratic = worst_quadratic.max(jerk_of_track(&track, fps).abs());
    }
    let cubic: Vec<Vec<Vector3<f64>>> = (0..60)
        .map(|k| {
            let t = k as f64 / fps;
            vec![Vector3::new(t * t * t, 0.0, 0.0)]
        })
        .collect();
    let j = jerk_of_track(&cubic, fps);
    check(
        worst_quadratic < 1e-9 && (j - 0.006).abs() < 1e-9,
        format!("quadratic max {worst_quadratic:.1e} km/s³, t³ gives {j:.12} km/s³"),
    )
}

fn main() {
    let dir = tempfile::tempdir().expect("temporary directory");
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "field-of-view grid oracle", fov_grid()),
        (2, "long drop statistics", drop_statistics()),
        (3, "event rate", poisson_rate()),
        (4, "yaw and translation invariance", invariance()),
        (5, "gradient checks", gradient_checks()),
        (6, "attention locality", attention_locality()),
        (11, "jerk exactness", jerk_exactness()),
    ];

    let trained = overfit(dir.path());
    results.push((7, "overfit experiment", trained.outcome.clone()));
    if trained.ckpt.exists() {
        match held_out(dir.path(), &trained.ckpt) {
            Ok((guided, plain)) => {
                results.push((8, "guidance efficacy", guidance_efficacy(&guided, &plain)));
                results.push((9, "shape consistency", shape_consistency(&[&guided, &plain])));
            }
            Err(e) => {
                results.push((8, "guidance efficacy", Err(e.clone())));
                results.push((9, "shape consistency", Err(e)));
            }
        }
        results.push((10, "pipeline determinism", determinism(dir.path(), &trained.ckpt)));
    } else {
        for (id, name) in [(8, "guidance efficacy"), (9, "shape consistency"), (10, "pipeline determinism")] {
            results.push((id, name, Err("no trained checkpoint".into())));
        }
    }

    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (id, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS  {id:>2} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {id:>2} {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
