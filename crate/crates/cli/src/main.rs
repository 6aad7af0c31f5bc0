//! pvtscan command-line interface: synthetic data generation, training,
//! evaluation, and single-case prediction.
//!
//! stdout carries machine-readable results (JSON, one document per run);
//! logs go to stderr. Exit codes: 0 success, 1 numeric failure, 2 I/O or
//! file-format error, 3 configuration or usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pvtscan::data::synth::{generate_synthetic, SyntheticSpec};
use pvtscan::data::{load_case_dir, load_dataset, Label};
use pvtscan::error::{Error, Result};
use pvtscan::eval::evaluate;
use pvtscan::infer::diagnose_case;
use pvtscan::model::PvtModel;
use pvtscan::rng::subseed;
use pvtscan::runconfig::RunConfig;
use pvtscan::sampler::SliceSampler;
use pvtscan::tensor::checkpoint;
use pvtscan::train::{sidecar_path, train, CheckpointSink, TrainOutcome};
use pvtscan::voting::VotingConfig;

#[derive(Parser)]
#[command(
    name = "pvtscan",
    version,
    about = "Slice-sampling CT classifier: data generation, training, evaluation, prediction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic CT-like dataset tree (train/ and val/ splits)
    GenSynth(GenSynthArgs),
    /// Train a model and write checkpoints, loss curve, and resolved config
    Train(TrainArgs),
    /// Evaluate a checkpoint on a labeled dataset and print the report JSON
    Eval(EvalArgs),
    /// Diagnose one case directory and print its verdict JSON line
    Predict(PredictArgs),
}

#[derive(Args)]
struct GenSynthArgs {
    /// Output directory for the dataset tree
    #[arg(long)]
    out: PathBuf,
    /// Training cases per class; validation gets one third, rounded up
    #[arg(long, default_value_t = 30)]
    cases_per_class: usize,
    /// Generator seed (same seed, same spec: byte-identical tree)
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset root containing train/ and val/ splits
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints, loss.csv, and resolved.config.txt
    #[arg(long)]
    out: PathBuf,
    /// Run-configuration file (key = value lines)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Single key=value override; repeatable, applied after the config file
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Root seed override, applied last
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Labeled dataset directory (covid/ and non-covid/ subdirectories)
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint file; its .config.txt sidecar supplies the architecture
    #[arg(long)]
    checkpoint: PathBuf,
    /// Voting rounds per case (default: the checkpoint's configured value)
    #[arg(long)]
    rounds: Option<usize>,
    /// Sampling seed (default: the checkpoint's configured seed)
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PredictArgs {
    /// Directory holding one case's numerically named slice images
    #[arg(long)]
    case_dir: PathBuf,
    /// Checkpoint file; its .config.txt sidecar supplies the architecture
    #[arg(long)]
    checkpoint: PathBuf,
    /// Voting rounds (default: the checkpoint's configured value)
    #[arg(long)]
    rounds: Option<usize>,
    /// Sampling seed (default: the checkpoint's configured seed)
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // --help and --version are successes; anything else is usage
            let code = if err.use_stderr() { 3 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::GenSynth(args) => cmd_gen_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Predict(args) => cmd_predict(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(match err {
                Error::Numeric(_) => 1,
                Error::Io { .. } | Error::Format(_) => 2,
                Error::Config(_) | Error::Shape(_) => 3,
            })
        }
    }
}

fn cmd_gen_synth(args: GenSynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        cases_per_class: args.cases_per_class,
        seed: args.seed,
        ..SyntheticSpec::default()
    };
    let manifest = generate_synthetic(&spec, &args.out)?;
    log::info!(
        "wrote {} train and {} val cases ({} slices) under {}",
        manifest.train_cases,
        manifest.val_cases,
        manifest.total_slices,
        args.out.display()
    );
    println!(
        "{}",
        serde_json::to_string_pretty(&manifest).expect("manifest serializes")
    );
    Ok(())
}

/// Resolve the run configuration: defaults, then the file, then each
/// `--set`, then `--seed`.
fn resolve_config(
    file: Option<&Path>,
    sets: &[String],
    seed: Option<u64>,
) -> Result<RunConfig> {
    let mut config = RunConfig::default();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        config.merge_str(&text)?;
    }
    for assignment in sets {
        let (key, value) = assignment.split_once('=').ok_or_else(|| {
            Error::Config(format!("--set expects KEY=VALUE, got {assignment:?}"))
        })?;
        config.set(key.trim(), value.trim())?;
    }
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn train_summary_json(outcome: &TrainOutcome, out: &Path) -> String {
    let value = serde_json::json!({
        "epochs": outcome.curve.len(),
        "steps": outcome.steps,
        "best_epoch": outcome.best_epoch,
        "best_val_macro_f1": outcome.best_val_macro_f1,
        "best_checkpoint": out.join("best.ckpt").display().to_string(),
        "last_checkpoint": out.join("last.ckpt").display().to_string(),
        "loss_csv": out.join("loss.csv").display().to_string(),
        "resolved_config": out.join("resolved.config.txt").display().to_string(),
    });
    serde_json::to_string_pretty(&value).expect("summary serializes")
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let config = resolve_config(args.config.as_deref(), &args.set, args.seed)?;
    let model_config = config.model_config()?;
    let train_config = config.train_config();
    train_config.validate()?;

    let train_cases = load_dataset(&args.data.join("train"))?;
    let val_cases = load_dataset(&args.data.join("val"))?;

    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let echo = config.to_config_string();
    let resolved_path = args.out.join("resolved.config.txt");
    std::fs::write(&resolved_path, &echo).map_err(|e| Error::io(&resolved_path, e))?;

    let mut model = PvtModel::new(model_config, subseed(config.seed, "init"))?;
    let sink = CheckpointSink::new(&args.out, &echo);
    let outcome = train(
        &mut model,
        &train_cases,
        Some(&val_cases),
        &config.preprocess_spec(),
        &train_config,
        Some(&sink),
    )?;

    let loss_path = args.out.join("loss.csv");
    std::fs::write(&loss_path, outcome.curve_csv()).map_err(|e| Error::io(&loss_path, e))?;

    println!("{}", train_summary_json(&outcome, &args.out));
    Ok(())
}

/// Rebuild the model a checkpoint was trained with: architecture from the
/// `<name>.ckpt.config.txt` sidecar, weights from the checkpoint itself.
fn load_model(path: &Path) -> Result<(PvtModel, RunConfig)> {
    let sidecar = sidecar_path(path);
    if !sidecar.is_file() {
        return Err(Error::Format(format!(
            "checkpoint sidecar {} not found; training writes it next to every checkpoint",
            sidecar.display()
        )));
    }
    let config = RunConfig::from_file(&sidecar)?;
    let mut model = PvtModel::new(config.model_config()?, 0)?;
    let state = checkpoint::load(path)?;
    model.load_state(&state)?;
    Ok((model, config))
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let (model, config) = load_model(&args.checkpoint)?;
    let cases = load_dataset(&args.data)?;
    let voting = VotingConfig::new(args.rounds.unwrap_or(config.voting_rounds))?;
    let seed = args.seed.unwrap_or(config.seed);
    let report = evaluate(
        &model,
        &cases,
        &config.preprocess_spec(),
        config.sigma_divisor,
        &voting,
        subseed(seed, "eval"),
    )?;
    println!("{}", report.to_json());
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let (model, config) = load_model(&args.checkpoint)?;
    let case = load_case_dir(&args.case_dir, Label::Unknown)?;
    let voting = VotingConfig::new(args.rounds.unwrap_or(config.voting_rounds))?;
    let seed = args.seed.unwrap_or(config.seed);
    let mut sampler = SliceSampler::new(subseed(seed, &case.case_id), config.sigma_divisor)?;
    let verdict = diagnose_case(
        &model,
        &case,
        &config.preprocess_spec(),
        &mut sampler,
        &voting,
    )?;
    println!("{}", verdict.to_json_line());
    Ok(())
}
