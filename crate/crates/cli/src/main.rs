use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hamos_cli::{resolve_seed, CliError, EvalRequest, SampleRequest, TrainRequest, ENV_SEED};
use hamos_core::augmentation::FovPreset;
use hamos_model::RunConfig;

#[derive(Parser)]
#[command(name = "hamos", version, about = "Full-body motion from head and sparse hand observations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write procedurally generated motion records.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        count: usize,
        #[arg(long, default_value_t = 128)]
        min_len: usize,
        #[arg(long, default_value_t = 256)]
        max_len: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Simulate field-of-view and tracking-loss hand visibility.
    Augment {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "random", value_parser = parse_preset)]
        fov_preset: FovPreset,
        #[arg(long)]
        strict: bool,
    },
    /// Train the model and write a checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Overrides the configured number of steps.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        strict: bool,
    },
    /// Sample motions for observation records.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        obs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_guidance: bool,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Where to write per-sequence sampling times.
        #[arg(long)]
        timings: Option<PathBuf>,
        #[arg(long)]
        strict: bool,
    },
    /// Compare predictions with ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        obs: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        timings: Option<PathBuf>,
        #[arg(long)]
        strict: bool,
    },
}

fn parse_preset(s: &str) -> Result<FovPreset, String> {
    s.parse().map_err(|e: hamos_core::augmentation::AugmentationError| e.to_string())
}

fn seed(flag: Option<u64>, fallback: u64) -> Result<u64, CliError> {
    let env = std::env::var(ENV_SEED).ok();
    resolve_seed(flag, env.as_deref(), fallback)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { out, count, min_len, max_len, seed: s } => {
            hamos_cli::gen_data(&out, count, min_len..=max_len, seed(s, 0)?)
        }
        Command::Augment { input, out, seed: s, fov_preset, strict } => {
            let n = hamos_cli::augment(&input, &out, seed(s, 0)?, fov_preset, strict)?;
            log::info!("augmented {n} sequence(s)");
            Ok(())
        }
        Command::Train { config, seed: s, data, ckpt, steps, resume, strict } => {
            let mut cfg = match &config {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?;
                    RunConfig::from_json(&text)?
                }
                None => RunConfig::default(),
            };
            cfg.seed = seed(s, cfg.seed)?;
            let report = hamos_cli::train(TrainRequest {
                config: cfg,
                data: &data,
                ckpt: &ckpt,
                steps,
                resume: resume.as_deref(),
                strict,
            })?;
            log::info!("final loss {:.5}", report.total);
            Ok(())
        }
        Command::Sample { ckpt, obs, out, no_guidance, steps, seed: s, timings, strict } => {
            let n = hamos_cli::sample(SampleRequest {
                ckpt: &ckpt,
                obs: &obs,
                out: &out,
                guidance: !no_guidance,
                steps,
                seed: seed(s, 0)?,
                timings: timings.as_deref(),
                strict,
            })?;
            log::info!("sampled {n} sequence(s)");
            Ok(())
        }
        Command::Eval { pred, gt, obs, report, timings, strict } => {
            let r = hamos_cli::eval(EvalRequest {
                pred: &pred,
                gt: &gt,
                obs: &obs,
                report: &report,
                timings: timings.as_deref(),
                strict,
            })?;
            println!("{}", serde_json::to_string_pretty(&r.aggregate).expect("reports serialize"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
