//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cryecapa::audio::{FrontendConfig, MfccConfig};
use cryecapa::model::parse_kv_lines;
use cryecapa::train::TrainConfig;
use cryecapa::{Arch, ModelConfig};

/// Everything a run needs. Every key has a default, so an empty file is a
/// valid config; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub arch: Arch,
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub dataset_root: PathBuf,
    pub cache_dir: PathBuf,
    pub silence_threshold_db: f64,
    pub silence_window_s: f64,
    pub target_s: f64,
    pub n_mels: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Improved,
            model: ModelConfig::default(),
            epochs: 700,
            batch_size: 64,
            lr: 2e-5,
            seed: 0,
            dataset_root: PathBuf::from("data"),
            cache_dir: PathBuf::from("cache"),
            silence_threshold_db: -35.0,
            silence_window_s: 0.05,
            target_s: 3.0,
            n_mels: 26,
        }
    }
}

const RUN_KEYS: [&str; 11] = [
    "arch",
    "epochs",
    "batch_size",
    "lr",
    "seed",
    "dataset_root",
    "cache_dir",
    "silence_threshold_db",
    "silence_window_s",
    "target_s",
    "n_mels",
];

/// Learning rates may be written as decimals or as powers such as `2^-5`.
pub fn parse_lr(text: &str) -> Result<f64> {
    let t = text.trim();
    let v = match t.split_once('^') {
        Some((base, exp)) => {
            let b: f64 = base.trim().parse().with_context(|| format!("bad learning rate '{t}'"))?;
            let e: f64 = exp.trim().parse().with_context(|| format!("bad learning rate '{t}'"))?;
            b.powf(e)
        }
        None => t.parse().with_context(|| format!("bad learning rate '{t}'"))?,
    };
    if !v.is_finite() || v < 0.0 {
        bail!("learning rate must be finite and non-negative, got {t}");
    }
    Ok(v)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || format!("bad value '{value}' for {key}");
        match key {
            "arch" => self.arch = value.parse().with_context(bad)?,
            "epochs" => self.epochs = value.parse().with_context(bad)?,
            "batch_size" => self.batch_size = value.parse().with_context(bad)?,
            "lr" => self.lr = parse_lr(value)?,
            "seed" => self.seed = value.parse().with_context(bad)?,
            "dataset_root" => self.dataset_root = PathBuf::from(value),
            "cache_dir" => self.cache_dir = PathBuf::from(value),
            "silence_threshold_db" => self.silence_threshold_db = value.parse().with_context(bad)?,
            "silence_window_s" => self.silence_window_s = value.parse().with_context(bad)?,
            "target_s" => self.target_s = value.parse().with_context(bad)?,
            "n_mels" => self.n_mels = value.parse().with_context(bad)?,
            _ => self.model.set(key, value)?,
        }
        Ok(())
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_kv_lines(text)? {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_kv_text(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn to_kv_text(&self) -> String {
        let mut out = String::new();
        let values = [
            self.arch.to_string(),
            self.epochs.to_string(),
            self.batch_size.to_string(),
            format!("{:e}", self.lr),
            self.seed.to_string(),
            self.dataset_root.display().to_string(),
            self.cache_dir.display().to_string(),
            self.silence_threshold_db.to_string(),
            self.silence_window_s.to_string(),
            self.target_s.to_string(),
            self.n_mels.to_string(),
        ];
        for (k, v) in RUN_KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out.push_str(&self.model.to_kv_text());
        out
    }

    pub fn frontend(&self) -> FrontendConfig {
        FrontendConfig {
            silence_threshold_db: self.silence_threshold_db,
            silence_window_s: self.silence_window_s,
            target_s: self.target_s,
            mfcc: MfccConfig {
                n_coeffs: self.model.input_coeffs,
                n_mels: self.n_mels,
                ..MfccConfig::default()
            },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            seed: self.seed,
        }
    }
}
