//! Synthetic "speakers" for tests and demos.
//!
//! Each voice is a fixed source class: either a harmonic series on a
//! voice-specific pitch shaped by three formant resonances, or Gaussian noise
//! through the same kind of resonator bank. Utterances are runs of syllables
//! with smooth on/off envelopes, pitch glides and short pauses, so masks have
//! both spectral and temporal structure to learn.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::audio_io::{self, Waveform, EXPECTED_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::mixsim::Gender;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    Harmonic,
    Noise,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoiceProfile {
    pub id: String,
    pub gender: Gender,
    pub kind: SourceKind,
    pub f0_hz: f64,
    /// (center Hz, bandwidth Hz) per formant.
    pub formants: [(f64, f64); 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n_speakers: usize,
    pub utts_per_speaker: usize,
    pub utt_sec: f64,
    pub rms: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_speakers: 10,
            utts_per_speaker: 6,
            utt_sec: 0.5,
            rms: 0.05,
            seed: 0,
        }
    }
}

/// Pitch spread log-uniformly over 90–270 Hz; every fourth voice is noise.
pub fn voice_profiles(n: usize, seed: u64) -> Vec<VoiceProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let frac = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
            let f0_hz = 90.0 * 3f64.powf(frac);
            let formants = [
                (rng.random_range(300.0..900.0), rng.random_range(80.0..160.0)),
                (rng.random_range(1000.0..2200.0), rng.random_range(100.0..200.0)),
                (rng.random_range(2400.0..3500.0), rng.random_range(150.0..250.0)),
            ];
            VoiceProfile {
                id: format!("spk{i:02}"),
                gender: if f0_hz < 165.0 { Gender::M } else { Gender::F },
                kind: if i % 4 == 3 { SourceKind::Noise } else { SourceKind::Harmonic },
                f0_hz,
                formants,
            }
        })
        .collect()
}

fn formant_gain(f: &[(f64, f64); 3], hz: f64) -> f64 {
    0.05 + f
        .iter()
        .map(|&(c, bw)| (-0.5 * ((hz - c) / bw).powi(2)).exp())
        .sum::<f64>()
}

/// Two-pole resonator bank, summed.
fn resonate(x: &[f64], formants: &[(f64, f64); 3]) -> Vec<f64> {
    let fs = EXPECTED_SAMPLE_RATE as f64;
    let mut out = vec![0.0; x.len()];
    for &(fc, bw) in formants {
        let r = (-PI * bw / fs).exp();
        let a1 = 2.0 * r * (2.0 * PI * fc / fs).cos();
        let a2 = -r * r;
        let (mut y1, mut y2) = (0.0, 0.0);
        for (o, &v) in out.iter_mut().zip(x) {
            let y = (1.0 - r) * v + a1 * y1 + a2 * y2;
            *o += y;
            y2 = y1;
            y1 = y;
        }
    }
    out
}

/// One utterance of exactly `len` samples.
pub fn synth_utterance(p: &VoiceProfile, len: usize, rng: &mut impl Rng) -> Waveform {
    let fs = EXPECTED_SAMPLE_RATE as f64;
    let mut x = vec![0.0; len];
    let mut t = (rng.random_range(0.0..0.04) * fs) as usize;
    while t < len {
        let seg = ((rng.random_range(0.08..0.2) * fs) as usize).min(len - t);
        let f_start = p.f0_hz * rng.random_range(0.92..1.08);
        let f_end = p.f0_hz * rng.random_range(0.92..1.08);
        let amp = rng.random_range(0.5..1.0);
        let body: Vec<f64> = match p.kind {
            SourceKind::Harmonic => {
                let n_harm = (3800.0 / f_start.max(f_end)) as usize;
                let gains: Vec<f64> = (1..=n_harm)
                    .map(|k| formant_gain(&p.formants, k as f64 * p.f0_hz) / (k as f64).sqrt())
                    .collect();
                let mut phase = 0.0;
                (0..seg)
                    .map(|n| {
                        let f = f_start + (f_end - f_start) * n as f64 / seg as f64;
                        phase += 2.0 * PI * f / fs;
                        gains
                            .iter()
                            .enumerate()
                            .map(|(k, g)| g * ((k + 1) as f64 * phase).sin())
                            .sum()
                    })
                    .collect()
            }
            SourceKind::Noise => {
                let white: Vec<f64> = (0..seg).map(|_| rng.sample(StandardNormal)).collect();
                resonate(&white, &p.formants)
            }
        };
        for (n, v) in body.into_iter().enumerate() {
            let env = (PI * (n as f64 + 0.5) / seg as f64).sin().powi(2);
            x[t + n] += amp * env * v;
        }
        t += seg + (rng.random_range(0.02..0.08) * fs) as usize;
    }
    Waveform::new(x, EXPECTED_SAMPLE_RATE)
}

fn scale_to_rms(mut w: Waveform, target: f64) -> Waveform {
    let r = w.rms();
    if r > 0.0 {
        for v in &mut w.samples {
            *v *= target / r;
        }
    }
    w
}

/// Where a written corpus lives.
#[derive(Debug, Clone)]
pub struct CorpusPaths {
    pub root: PathBuf,
    pub gender_map: PathBuf,
}

/// Write `root/<speaker>/<utt>.wav` plus `root/genders.txt`.
pub fn write_corpus(root: impl AsRef<Path>, cfg: &SynthConfig) -> Result<CorpusPaths> {
    let root = root.as_ref();
    if cfg.n_speakers < 2 || cfg.utts_per_speaker < 2 || cfg.utt_sec <= 0.0 {
        return Err(Error::InvalidConfig(
            "synthetic corpus needs ≥2 speakers with ≥2 utterances each".into(),
        ));
    }
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let len = (cfg.utt_sec * EXPECTED_SAMPLE_RATE as f64).round() as usize;
    let mut genders = String::new();
    for (s, p) in voice_profiles(cfg.n_speakers, cfg.seed).iter().enumerate() {
        let dir = root.join(&p.id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        genders.push_str(&format!("{} {}\n", p.id, p.gender));
        for u in 0..cfg.utts_per_speaker {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream((s * 10_000 + u) as u64 + 1);
            let w = scale_to_rms(synth_utterance(p, len, &mut rng), cfg.rms);
            audio_io::write_wav(dir.join(format!("utt{u:02}.wav")), &w)?;
        }
    }
    let gender_map = root.join("genders.txt");
    fs::write(&gender_map, genders).map_err(|e| Error::io(&gender_map, e))?;
    Ok(CorpusPaths {
        root: root.to_path_buf(),
        gender_map,
    })
}
