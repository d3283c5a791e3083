//! Per-utterance spectral features and in-memory extraction.
//!
//! An [`Example`] holds everything training and scoring need for one
//! manifest record: the mixture STFT, magnitudes of mixture and enrollment,
//! the phase-sensitive target and the binary mask. The interferer is recovered
//! as mixture − target, which is exact up to WAV quantization.

use std::sync::Arc;

use ndarray::Array2;

use crate::audio_io::{self, Waveform};
use crate::error::{Error, Result};
use crate::evalkit::{EvalReport, UttScore};
use crate::exec::Execution;
use crate::masks::{self, Mask};
use crate::mixsim::Manifest;
use crate::net::{Model, Sample};
use crate::stft::{Spectrogram, StftConfig, StftPlan};

#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub same_gender: bool,
    pub mixture: Waveform,
    pub target: Waveform,
    pub mix_spec: Spectrogram,
    pub mix_mag: Array2<f64>,
    pub enroll_mag: Array2<f64>,
    pub psm: Array2<f64>,
    pub ibm: Array2<f64>,
}

impl Example {
    pub fn from_waveforms(
        id: impl Into<String>,
        mixture: Waveform,
        target: Waveform,
        enroll: &Waveform,
        same_gender: bool,
        plan: &StftPlan,
        psm_clamp: bool,
    ) -> Result<Self> {
        if mixture.len() != target.len() {
            return Err(Error::LengthMismatch {
                est: mixture.len(),
                reference: target.len(),
            });
        }
        let interf = Waveform::new(
            mixture.samples.iter().zip(&target.samples).map(|(y, x)| y - x).collect(),
            mixture.sample_rate_hz,
        );
        let mix_spec = plan.stft(&mixture)?;
        let tgt_spec = plan.stft(&target)?;
        let int_spec = plan.stft(&interf)?;
        let mix_mag = mix_spec.magnitude();
        let tgt_mag = tgt_spec.magnitude();
        let psm = masks::psm_target_with(&mix_mag, &tgt_mag, &mix_spec.phase(), &tgt_spec.phase(), psm_clamp)?;
        let ibm = masks::ibm(&tgt_mag, &int_spec.magnitude())?.0;
        let enroll_mag = plan.stft(enroll)?.magnitude();
        Ok(Self {
            id: id.into(),
            same_gender,
            mixture,
            target,
            mix_spec,
            mix_mag,
            enroll_mag,
            psm,
            ibm,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.mix_mag.nrows()
    }

    pub fn sample(&self) -> Sample<'_> {
        Sample {
            mix_mag: &self.mix_mag,
            enroll_mag: &self.enroll_mag,
            psm: &self.psm,
            ibm: &self.ibm,
        }
    }
}

fn read_for(id: &str, path: &std::path::Path) -> Result<Waveform> {
    audio_io::read_wav(path).map_err(|e| match e {
        Error::NotFound(p) => Error::Data(format!("record {id}: missing file {}", p.display())),
        other => other,
    })
}

/// Load every record of `manifest` into memory.
pub fn load_examples(
    manifest: &Manifest,
    stft: StftConfig,
    psm_clamp: bool,
    exec: Execution,
) -> Result<Vec<Example>> {
    let plan = StftPlan::cached(stft)?;
    let loaded = exec.map(&manifest.records, |rec| {
        let id = rec.id();
        let mixture = read_for(&id, &manifest.resolve(&rec.mixture))?;
        let target = read_for(&id, &manifest.resolve(&rec.target_ref))?;
        let enroll = read_for(&id, &manifest.resolve(&rec.enroll))?;
        Example::from_waveforms(id, mixture, target, &enroll, rec.same_gender(), &plan, psm_clamp)
    });
    loaded.into_iter().collect()
}

/// Estimated target waveform for a mixture, given an enrollment magnitude.
pub fn extract(model: &Model, mix_spec: &Spectrogram, enroll_mag: &Array2<f64>) -> Result<Waveform> {
    let mask = model.infer(&mix_spec.magnitude(), enroll_mag)?;
    masks::apply_mask(mix_spec, &mask)
}

/// Extract from waveforms directly; the enrollment goes through the same STFT.
pub fn extract_waveform(model: &Model, mixture: &Waveform, enroll: &Waveform, stft: StftConfig) -> Result<Waveform> {
    let plan: Arc<StftPlan> = StftPlan::cached(stft)?;
    let mix_spec = plan.stft(mixture)?;
    let enroll_mag = plan.stft(enroll)?.magnitude();
    extract(model, &mix_spec, &enroll_mag)
}

/// Score the model's extractions of in-memory examples.
pub fn evaluate_model(model: &Model, examples: &[Example], exec: Execution) -> Result<EvalReport> {
    let scores = exec.map(examples, |ex| -> Result<UttScore> {
        let est = extract(model, &ex.mix_spec, &ex.enroll_mag)?;
        UttScore::score(ex.id.clone(), &est, &ex.mixture, &ex.target, ex.same_gender)
    });
    Ok(EvalReport::from_scores(scores.into_iter().collect::<Result<Vec<_>>>()?))
}

/// Score clamped oracle PSM extractions of in-memory examples.
pub fn evaluate_oracle(examples: &[Example], stft: StftConfig, exec: Execution) -> Result<EvalReport> {
    let plan = StftPlan::cached(stft)?;
    let scores = exec.map(examples, |ex| -> Result<UttScore> {
        let tgt = plan.stft(&ex.target)?;
        let mask: Mask = masks::oracle_psm(&ex.mix_spec, &tgt)?;
        let est = masks::apply_mask(&ex.mix_spec, &mask)?;
        UttScore::score(ex.id.clone(), &est, &ex.mixture, &ex.target, ex.same_gender)
    });
    Ok(EvalReport::from_scores(scores.into_iter().collect::<Result<Vec<_>>>()?))
}
