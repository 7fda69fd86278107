use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    /// Samples in `[-1, 1]`.
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self { samples, sample_rate }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

fn map_hound(e: hound::Error) -> Error {
    match e {
        // hound reports short reads as `Other`
        hound::Error::IoError(io)
            if matches!(
                io.kind(),
                std::io::ErrorKind::UnexpectedEof | std::io::ErrorKind::Other | std::io::ErrorKind::InvalidData
            ) =>
        {
            Error::CorruptHeader(io.to_string())
        }
        hound::Error::IoError(io) => Error::Io(io),
        hound::Error::Unsupported => Error::UnsupportedFormat("not integer PCM".into()),
        other => Error::CorruptHeader(other.to_string()),
    }
}

/// Decode 16-bit PCM, scaling by 1/32768 and averaging channels.
pub fn load_wav(path: &Path) -> Result<AudioClip> {
    if !path.is_file() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let reader = hound::WavReader::open(path).map_err(map_hound)?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedFormat(format!(
            "{:?} with {} bits per sample",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    if spec.sample_rate == 0 || spec.channels == 0 {
        return Err(Error::CorruptHeader("zero sample rate or channel count".into()));
    }
    let raw: Vec<i16> = reader.into_samples::<i16>().collect::<std::result::Result<_, _>>().map_err(map_hound)?;
    let ch = spec.channels as usize;
    let samples = raw
        .chunks_exact(ch)
        .map(|frame| frame.iter().map(|&s| s as f64 / 32768.0).sum::<f64>() / ch as f64)
        .collect();
    Ok(AudioClip::new(samples, spec.sample_rate))
}

/// Write a mono 16-bit PCM file, clamping to the representable range.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(map_hound)?;
    for &s in &clip.samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(q).map_err(map_hound)?;
    }
    w.finalize().map_err(map_hound)
}
