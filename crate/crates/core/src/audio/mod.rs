//! WAV decoding, silence removal, length normalisation, MFCCs and the feature cache.

mod cache;
mod mfcc;
mod preprocess;
mod wav;

pub use cache::{cache_path, read_feature_cache, write_feature_cache, CACHE_EXTENSION, CACHE_VERSION};
pub use mfcc::{cepstra, hamming, log_mel_energies, mel_filterbank, mfcc, resample_linear, FeatureMap, MfccConfig};
pub use preprocess::{normalize_length, remove_silence};
pub use wav::{load_wav, write_wav, AudioClip};

use std::path::Path;

use crate::error::Result;

/// End-to-end front-end settings.
#[derive(Clone, Debug, PartialEq)]
pub struct FrontendConfig {
    pub silence_threshold_db: f64,
    pub silence_window_s: f64,
    pub target_s: f64,
    pub mfcc: MfccConfig,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            silence_threshold_db: -35.0,
            silence_window_s: 0.05,
            target_s: 3.0,
            mfcc: MfccConfig::default(),
        }
    }
}

/// Silence removal, length normalisation and MFCC extraction.
pub fn extract(clip: &AudioClip, cfg: &FrontendConfig) -> Result<FeatureMap> {
    let voiced = remove_silence(clip, cfg.silence_threshold_db, cfg.silence_window_s)?;
    let fixed = normalize_length(&voiced, cfg.target_s);
    mfcc(&fixed, &cfg.mfcc)
}

pub fn features_from_wav(path: &Path, cfg: &FrontendConfig) -> Result<FeatureMap> {
    extract(&load_wav(path)?, cfg)
}
