use crate::error::{Error, Result};

use super::AudioClip;

fn rms(w: &[f64]) -> f64 {
    (w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64).sqrt()
}

/// Energy gate over non-overlapping windows of `window_s` seconds (the last
/// may be shorter). A window survives when its RMS is within `threshold_db`
/// of the loudest window; survivors are concatenated in order.
pub fn remove_silence(clip: &AudioClip, threshold_db: f64, window_s: f64) -> Result<AudioClip> {
    if !(window_s > 0.0) {
        return Err(Error::ConfigInvalid(format!("silence window must be positive, got {window_s}")));
    }
    let n = ((window_s * clip.sample_rate as f64).round() as usize).max(1);
    let levels: Vec<f64> = clip.samples.chunks(n).map(rms).collect();
    let peak = levels.iter().cloned().fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(Error::AllSilent);
    }
    let floor = peak * 10f64.powf(threshold_db / 20.0);
    let samples: Vec<f64> = clip
        .samples
        .chunks(n)
        .zip(&levels)
        .filter(|(_, &l)| l >= floor)
        .flat_map(|(w, _)| w.iter().copied())
        .collect();
    if samples.is_empty() {
        return Err(Error::AllSilent);
    }
    Ok(AudioClip::new(samples, clip.sample_rate))
}

/// Centre-crop or zero-pad to `floor(target_s · rate)` samples. Crops start at
/// `floor(excess / 2)`; pads put `floor(missing / 2)` zeros on the left.
pub fn normalize_length(clip: &AudioClip, target_s: f64) -> AudioClip {
    let target = (target_s * clip.sample_rate as f64 + 1e-9).floor() as usize;
    let len = clip.samples.len();
    let samples = if len >= target {
        let start = (len - target) / 2;
        clip.samples[start..start + target].to_vec()
    } else {
        let left = (target - len) / 2;
        let mut out = vec![0.0; target];
        out[left..left + len].copy_from_slice(&clip.samples);
        out
    };
    AudioClip::new(samples, clip.sample_rate)
}
