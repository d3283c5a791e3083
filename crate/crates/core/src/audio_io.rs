//! Mono 16-bit PCM WAV reading and writing.
//!
//! Samples are scaled by 1/32768 on read and by 32768 on write, so -1.0 maps
//! to `i16::MIN` exactly. Values above the largest representable level are
//! clamped to `1 - 2^-15` before quantization.

use std::path::Path;

use crate::error::{Error, Result};

pub const EXPECTED_SAMPLE_RATE: u32 = 8000;

const SCALE: f64 = 32768.0;
/// Largest amplitude representable after quantization.
pub const MAX_AMPLITUDE: f64 = 1.0 - 1.0 / SCALE;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Self {
        Self {
            samples,
            sample_rate_hz,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn duration_sec(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Clamp to the quantizer's representable range.
pub fn clamp_sample(x: f64) -> f64 {
    x.clamp(-1.0, MAX_AMPLITUDE)
}

pub fn quantize(x: f64) -> i16 {
    (clamp_sample(x) * SCALE).round() as i16
}

pub fn dequantize(s: i16) -> f64 {
    s as f64 / SCALE
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: format!("{} channels, expected mono", spec.channels),
        });
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: format!(
                "{:?} {}-bit samples, expected 16-bit integer PCM",
                spec.sample_format, spec.bits_per_sample
            ),
        });
    }
    if spec.sample_rate == 0 {
        return Err(Error::CorruptHeader {
            path: path.to_path_buf(),
            reason: "sample rate is zero".into(),
        });
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(dequantize))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| map_hound(path, e))?;
    if samples.is_empty() {
        return Err(Error::CorruptHeader {
            path: path.to_path_buf(),
            reason: "no samples".into(),
        });
    }
    Ok(Waveform::new(samples, spec.sample_rate))
}

pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &x in &w.samples {
        writer
            .write_sample(quantize(x))
            .map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}

fn map_hound(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => {
            // hound reports truncation as UnexpectedEof or a generic short read
            use std::io::ErrorKind::{NotFound, PermissionDenied};
            if !matches!(io.kind(), NotFound | PermissionDenied) {
                Error::CorruptHeader {
                    path: path.to_path_buf(),
                    reason: io.to_string(),
                }
            } else {
                Error::io(path, io)
            }
        }
        hound::Error::FormatError(reason) => Error::CorruptHeader {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        },
        other => Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}
