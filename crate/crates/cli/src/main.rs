//! `cryecapa`: feature extraction, training, evaluation, inference and
//! complexity analysis for infant-cry emotion recognition.

mod commands;
mod config;
mod layout;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use crate::config::{parse_lr, RunConfig};

/// Infant-cry emotion recognition with an improved ECAPA-TDNN.
#[derive(Parser, Debug)]
#[command(name = "cryecapa", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand. Each one overrides the matching key of
/// the config file, which in turn overrides the built-in default.
#[derive(Args, Debug, Clone, Default)]
pub struct GlobalArgs {
    /// Run configuration file of `key = value` lines [default: built-in defaults, listed below]
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for initialisation, shuffling and the train/test split [default: 0]
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Remove one added module from the improved model; repeatable [default: none]
    #[arg(long, global = true, value_enum, value_name = "MODULE")]
    pub ablate: Vec<Ablation>,
    /// Frames per clip; sets target_frames, and is the T used by `analyze` [default: 298]
    #[arg(long, global = true, value_name = "INT")]
    pub frames: Option<usize>,
    /// Training epochs [default: 700]
    #[arg(long, global = true, value_name = "INT")]
    pub epochs: Option<usize>,
    /// Adam learning rate; decimals or powers such as 2^-5 [default: 2e-5]
    #[arg(long, global = true, value_name = "FLOAT", value_parser = parse_lr_arg)]
    pub lr: Option<f64>,
    /// Mini-batch size for training and evaluation [default: 64]
    #[arg(long, global = true, value_name = "INT")]
    pub batch: Option<usize>,
}

fn parse_lr_arg(s: &str) -> Result<f64, String> {
    parse_lr(s).map_err(|e| e.to_string())
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    /// multi-scale channel attention
    Mca,
    /// residual squeeze-excitation
    Rse,
    /// differential attention
    Diffattn,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Convert every WAV under the dataset root into a cached feature map
    Features(FeaturesArgs),
    /// Split the cached dataset 8:2 per class and train a model
    Train(TrainArgs),
    /// Evaluate a checkpoint and write confusion matrices
    Eval(EvalArgs),
    /// Print class probabilities for one WAV file
    Infer(InferArgs),
    /// Report parameter counts and FLOPs for the improved and baseline models
    Analyze,
}

#[derive(Args, Debug)]
pub struct FeaturesArgs {
    /// Dataset root holding `<label>/<clip>.wav` [default: config dataset_root, "data"]
    #[arg(long, value_name = "DIR")]
    pub root: Option<PathBuf>,
    /// Output cache directory [default: config cache_dir, "cache"]
    #[arg(long, value_name = "DIR")]
    pub cache: Option<PathBuf>,
    /// `path,label` list used instead of the directory layout [default: <root>/manifest.csv if present]
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Feature cache directory [default: config cache_dir, "cache"]
    #[arg(long, value_name = "DIR")]
    pub cache: Option<PathBuf>,
    /// Final checkpoint path; the best-accuracy checkpoint goes next to it as <stem>.best.ckpt
    #[arg(long, value_name = "PATH", default_value = "model.ckpt")]
    pub checkpoint: PathBuf,
    /// Epoch log path
    #[arg(long, value_name = "PATH", default_value = "train_log.csv")]
    pub log: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    All,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint to evaluate
    #[arg(long, value_name = "PATH", default_value = "model.ckpt")]
    pub checkpoint: PathBuf,
    /// Feature cache directory [default: config cache_dir, "cache"]
    #[arg(long, value_name = "DIR")]
    pub cache: Option<PathBuf>,
    /// Which part of the seeded 8:2 split to score
    #[arg(long, value_enum, default_value = "test")]
    pub split: Split,
    /// Directory for confusion_counts.csv and confusion_percent.csv
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    /// Checkpoint to load
    #[arg(long, value_name = "PATH", default_value = "model.ckpt")]
    pub checkpoint: PathBuf,
    /// WAV file to classify
    #[arg(value_name = "WAV")]
    pub wav: PathBuf,
}

/// Exit status for a failed command: 2 for domain errors such as an all-silent
/// clip, 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let domain = err
        .chain()
        .any(|e| matches!(e.downcast_ref::<cryecapa::Error>(), Some(cryecapa::Error::AllSilent)));
    if domain {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let defaults = format!(
        "Config file keys and their defaults:\n{}",
        RunConfig::default()
            .to_kv_text()
            .lines()
            .map(|l| format!("  {l}"))
            .collect::<Vec<_>>()
            .join("\n")
    );
    let cmd = Cli::command()
        .after_long_help(defaults.clone())
        .mut_subcommands(|sub| sub.after_long_help(defaults.clone()));
    let cli = match cmd.try_get_matches().and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
