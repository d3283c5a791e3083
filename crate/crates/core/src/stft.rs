//! Short-time Fourier analysis and overlap-add synthesis.
//!
//! Analysis and synthesis share one window: a periodic square-root Hamming
//! window scaled so that the squared window overlap-adds to exactly one.
//! The signal is reflect-padded by `win_len - hop` samples at the start and
//! up to a full frame at the end, so every original sample is covered by the
//! same number of frames and reconstruction is exact up to the edges.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use ndarray::Array2;
use realfft::num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use serde::{Deserialize, Serialize};

use crate::audio_io::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct StftConfig {
    pub win_len: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    /// 32 ms window, 16 ms shift at 8 kHz.
    fn default() -> Self {
        Self {
            win_len: 256,
            hop: 128,
        }
    }
}

impl StftConfig {
    pub fn fft_size(&self) -> usize {
        self.win_len
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size() / 2 + 1
    }

    /// Samples of reflect padding ahead of the first original sample.
    pub fn start_pad(&self) -> usize {
        self.win_len - self.hop
    }

    pub fn validate(&self) -> Result<()> {
        if self.win_len < 2 || self.hop == 0 || self.hop > self.win_len {
            return Err(Error::InvalidConfig(format!(
                "stft window {} / hop {} is not usable",
                self.win_len, self.hop
            )));
        }
        if !self.win_len.is_multiple_of(self.hop) {
            return Err(Error::InvalidConfig(format!(
                "hop {} must divide window length {}",
                self.hop, self.win_len
            )));
        }
        if self.win_len / self.hop < 2 {
            return Err(Error::InvalidConfig(
                "window overlap must be at least 50%".into(),
            ));
        }
        Ok(())
    }

    /// Frame count for a signal of `len` samples.
    pub fn n_frames(&self, len: usize) -> usize {
        (len + self.start_pad() - 1) / self.hop + 1
    }

    fn padded_len(&self, len: usize) -> usize {
        (self.n_frames(len) - 1) * self.hop + self.win_len
    }
}

/// Complex T×F spectrogram with the framing needed to invert it.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: Array2<Complex64>,
    pub config: StftConfig,
    pub original_len: usize,
    pub sample_rate_hz: u32,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.values.ncols()
    }

    pub fn magnitude(&self) -> Array2<f64> {
        magnitude(&self.values)
    }

    pub fn phase(&self) -> Array2<f64> {
        phase(&self.values)
    }
}

/// Window plus FFT plans for one configuration.
pub struct StftPlan {
    config: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
}

impl StftPlan {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = RealFftPlanner::<f64>::new();
        Ok(Self {
            config,
            window: make_window(&config),
            forward: planner.plan_fft_forward(config.fft_size()),
            inverse: planner.plan_fft_inverse(config.fft_size()),
        })
    }

    /// Shared plan for `config`, built on first use.
    pub fn cached(config: StftConfig) -> Result<Arc<StftPlan>> {
        static CACHE: OnceLock<Mutex<HashMap<StftConfig, Arc<StftPlan>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        let mut guard = cache.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(plan) = guard.get(&config) {
            return Ok(plan.clone());
        }
        let plan = Arc::new(StftPlan::new(config)?);
        guard.insert(config, plan.clone());
        Ok(plan)
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn stft(&self, w: &Waveform) -> Result<Spectrogram> {
        let cfg = self.config;
        let len = w.len();
        if len < cfg.win_len {
            return Err(Error::SignalTooShort {
                len,
                min: cfg.win_len,
            });
        }
        let padded = reflect_pad(&w.samples, cfg.start_pad(), cfg.padded_len(len));
        let n_frames = cfg.n_frames(len);
        let n_bins = cfg.n_bins();

        let mut values = Array2::<Complex64>::zeros((n_frames, n_bins));
        let mut frame = self.forward.make_input_vec();
        let mut spectrum = self.forward.make_output_vec();
        let mut scratch = self.forward.make_scratch_vec();
        for (t, mut row) in values.rows_mut().into_iter().enumerate() {
            let start = t * cfg.hop;
            for ((f, &x), &win) in frame
                .iter_mut()
                .zip(&padded[start..start + cfg.win_len])
                .zip(&self.window)
            {
                *f = x * win;
            }
            self.forward
                .process_with_scratch(&mut frame, &mut spectrum, &mut scratch)
                .expect("fft buffer sizes come from the plan");
            for (dst, src) in row.iter_mut().zip(&spectrum) {
                *dst = *src;
            }
        }
        Ok(Spectrogram {
            values,
            config: cfg,
            original_len: len,
            sample_rate_hz: w.sample_rate_hz,
        })
    }

    pub fn istft(&self, s: &Spectrogram) -> Result<Waveform> {
        let cfg = self.config;
        if s.config != cfg {
            return Err(Error::InvalidConfig(
                "spectrogram was produced with a different configuration".into(),
            ));
        }
        if s.n_bins() != cfg.n_bins() {
            return Err(Error::ShapeMismatch(
                vec![s.n_frames(), s.n_bins()],
                vec![s.n_frames(), cfg.n_bins()],
            ));
        }
        let n = cfg.fft_size();
        let norm = 1.0 / n as f64;
        let out_len = (s.n_frames().saturating_sub(1)) * cfg.hop + cfg.win_len;
        let mut out = vec![0.0; out_len];
        let mut spectrum = self.inverse.make_input_vec();
        let mut frame = self.inverse.make_output_vec();
        let mut scratch = self.inverse.make_scratch_vec();
        for (t, row) in s.values.rows().into_iter().enumerate() {
            for (dst, src) in spectrum.iter_mut().zip(row.iter()) {
                *dst = *src;
            }
            // A real signal's DC and Nyquist bins are real; drop any imaginary part.
            spectrum[0].im = 0.0;
            spectrum[n / 2].im = 0.0;
            self.inverse
                .process_with_scratch(&mut spectrum, &mut frame, &mut scratch)
                .expect("fft buffer sizes come from the plan");
            let start = t * cfg.hop;
            for ((o, &x), &win) in out[start..start + n]
                .iter_mut()
                .zip(&frame)
                .zip(&self.window)
            {
                *o += x * norm * win;
            }
        }
        let begin = cfg.start_pad();
        let end = (begin + s.original_len).min(out.len());
        let mut samples = out[begin.min(end)..end].to_vec();
        samples.resize(s.original_len, 0.0);
        Ok(Waveform::new(samples, s.sample_rate_hz))
    }
}

/// Periodic Hamming window, square-rooted and scaled so the squared window
/// overlap-adds to one at the configured hop.
pub fn make_window(cfg: &StftConfig) -> Vec<f64> {
    let n = cfg.win_len;
    let hamming: Vec<f64> = (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect();
    let overlap: f64 = (0..n).step_by(cfg.hop).map(|i| hamming[i]).sum();
    let gain = 1.0 / overlap.sqrt();
    hamming.into_iter().map(|h| h.sqrt() * gain).collect()
}

pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<Spectrogram> {
    StftPlan::cached(*cfg)?.stft(w)
}

pub fn istft(s: &Spectrogram) -> Result<Waveform> {
    StftPlan::cached(s.config)?.istft(s)
}

pub fn magnitude(values: &Array2<Complex64>) -> Array2<f64> {
    values.mapv(|c| c.norm())
}

/// Elementwise argument in (-π, π].
pub fn phase(values: &Array2<Complex64>) -> Array2<f64> {
    values.mapv(|c| {
        let p = c.im.atan2(c.re);
        // atan2 returns -π for (-x, -0.0)
        if p == -PI {
            PI
        } else {
            p
        }
    })
}

/// Complex matrix from polar parts.
pub fn from_polar(mag: &Array2<f64>, phase: &Array2<f64>) -> Array2<Complex64> {
    ndarray::Zip::from(mag)
        .and(phase)
        .map_collect(|&m, &p| Complex64::from_polar(m, p))
}

fn reflect_pad(x: &[f64], start: usize, total: usize) -> Vec<f64> {
    let len = x.len();
    let mut out = Vec::with_capacity(total);
    out.extend((0..start).map(|i| x[reflect_index(i as isize - start as isize, len)]));
    out.extend_from_slice(x);
    let tail = total - out.len();
    out.extend((0..tail).map(|j| x[reflect_index((len + j) as isize, len)]));
    out
}

/// Mirror an out-of-range index about the end samples, excluding the edge.
fn reflect_index(i: isize, len: usize) -> usize {
    let len = len as isize;
    if len == 1 {
        return 0;
    }
    let period = 2 * (len - 1);
    let mut k = i.rem_euclid(period);
    if k >= len {
        k = period - k;
    }
    k as usize
}
