use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::AudioClip;

#[derive(Clone, Debug, PartialEq)]
pub struct MfccConfig {
    pub sample_rate: u32,
    pub n_coeffs: usize,
    pub n_mels: usize,
    pub frame_s: f64,
    pub hop_s: f64,
    pub n_fft: usize,
    pub pre_emphasis: f64,
    pub f_min: f64,
    /// `None` means Nyquist.
    pub f_max: Option<f64>,
    /// Per-coefficient mean/variance normalisation over the clip.
    pub normalize: bool,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            n_coeffs: 13,
            n_mels: 26,
            frame_s: 0.025,
            hop_s: 0.010,
            n_fft: 512,
            pre_emphasis: 0.97,
            f_min: 0.0,
            f_max: None,
            normalize: true,
        }
    }
}

impl MfccConfig {
    pub fn frame_len(&self) -> usize {
        (self.frame_s * self.sample_rate as f64).round() as usize
    }

    pub fn hop_len(&self) -> usize {
        (self.hop_s * self.sample_rate as f64).round() as usize
    }

    /// `floor((n − frame) / hop) + 1`, or `None` when shorter than a frame.
    pub fn num_frames(&self, n_samples: usize) -> Option<usize> {
        let frame = self.frame_len();
        (n_samples >= frame).then(|| (n_samples - frame) / self.hop_len() + 1)
    }
}

/// `C×T` cepstral feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub values: Tensor,
    pub frame_hop_s: f64,
}

impl FeatureMap {
    pub fn num_coeffs(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn num_frames(&self) -> usize {
        self.values.shape()[1]
    }
}

/// Linear-interpolation resampling; output length `floor(n · to / from)`.
pub fn resample_linear(samples: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to || samples.is_empty() {
        return samples.to_vec();
    }
    let n_out = (samples.len() as u64 * to as u64 / from as u64) as usize;
    let last = samples.len() - 1;
    (0..n_out)
        .map(|i| {
            let pos = i as f64 * from as f64 / to as f64;
            let j = (pos.floor() as usize).min(last);
            let frac = pos - j as f64;
            let next = samples[(j + 1).min(last)];
            samples[j] + frac * (next - samples[j])
        })
        .collect()
}

/// Symmetric Hamming window.
pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n).map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos()).collect()
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// HTK-style triangular filters over the `n_fft/2 + 1` power bins,
/// `[n_mels][bins]`.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32, f_min: f64, f_max: f64) -> Vec<Vec<f64>> {
    let bins = n_fft / 2 + 1;
    let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    (0..n_mels)
        .map(|m| {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * sample_rate as f64 / n_fft as f64;
                    ((f - l) / (c - l)).min((r - f) / (r - c)).max(0.0)
                })
                .collect()
        })
        .collect()
}

/// Log mel energies `[frames][n_mels]` after resampling, pre-emphasis and windowing.
pub fn log_mel_energies(clip: &AudioClip, cfg: &MfccConfig) -> Result<Vec<Vec<f64>>> {
    let x = resample_linear(&clip.samples, clip.sample_rate, cfg.sample_rate);
    let frame = cfg.frame_len();
    let t = cfg.num_frames(x.len()).ok_or(Error::TooShort { len: x.len(), frame })?;
    if cfg.n_fft < frame {
        return Err(Error::ConfigInvalid(format!("n_fft {} shorter than frame {frame}", cfg.n_fft)));
    }
    let a = cfg.pre_emphasis;
    let y: Vec<f64> = (0..x.len()).map(|i| x[i] - a * x[i.saturating_sub(1)]).collect();
    let win = hamming(frame);
    let f_max = cfg.f_max.unwrap_or(cfg.sample_rate as f64 / 2.0);
    let bank = mel_filterbank(cfg.n_mels, cfg.n_fft, cfg.sample_rate, cfg.f_min, f_max);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.n_fft);
    let hop = cfg.hop_len();
    let bins = cfg.n_fft / 2 + 1;
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    let mut out = Vec::with_capacity(t);
    for f in 0..t {
        let seg = &y[f * hop..f * hop + frame];
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for i in 0..frame {
            buf[i].re = seg[i] * win[i];
        }
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..bins].iter().map(|c| c.norm_sqr() / cfg.n_fft as f64).collect();
        out.push(
            bank.iter()
                .map(|filt| filt.iter().zip(&power).map(|(w, p)| w * p).sum::<f64>().max(1e-10).ln())
                .collect(),
        );
    }
    Ok(out)
}

/// Orthonormal DCT-II of the log mel energies, first `n_coeffs` kept; `C×T`
/// before normalisation.
pub fn cepstra(clip: &AudioClip, cfg: &MfccConfig) -> Result<Tensor> {
    if cfg.n_coeffs == 0 || cfg.n_coeffs > cfg.n_mels {
        return Err(Error::ConfigInvalid(format!(
            "n_coeffs {} must be in 1..={}",
            cfg.n_coeffs, cfg.n_mels
        )));
    }
    let mel = log_mel_energies(clip, cfg)?;
    let (t, m) = (mel.len(), cfg.n_mels);
    let mut data = vec![0.0; cfg.n_coeffs * t];
    for k in 0..cfg.n_coeffs {
        let scale = if k == 0 { (1.0 / m as f64).sqrt() } else { (2.0 / m as f64).sqrt() };
        let basis: Vec<f64> = (0..m).map(|n| (PI * k as f64 * (2 * n + 1) as f64 / (2 * m) as f64).cos()).collect();
        for (f, frame) in mel.iter().enumerate() {
            data[k * t + f] = scale * frame.iter().zip(&basis).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    Tensor::new(vec![cfg.n_coeffs, t], data)
}

pub fn mfcc(clip: &AudioClip, cfg: &MfccConfig) -> Result<FeatureMap> {
    let mut values = cepstra(clip, cfg)?;
    if cfg.normalize {
        let t = values.shape()[1];
        for row in values.data_mut().chunks_mut(t) {
            let mean = row.iter().sum::<f64>() / t as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64;
            let sd = var.sqrt().max(1e-8);
            row.iter_mut().for_each(|v| *v = (*v - mean) / sd);
        }
    }
    Ok(FeatureMap { values, frame_hop_s: cfg.hop_s })
}
