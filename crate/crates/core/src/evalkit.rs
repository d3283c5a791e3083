//! SI-SDR scoring and per-condition aggregation.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio_io::{self, Waveform};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::mixsim::Manifest;

/// Upper bound reported when the residual vanishes numerically.
pub const SI_SDR_CAP_DB: f64 = 60.0;

/// Scale-invariant SDR in dB, after removing the mean of both signals.
pub fn si_sdr(est: &Waveform, reference: &Waveform) -> Result<f64> {
    si_sdr_slices(&est.samples, &reference.samples)
}

pub fn si_sdr_slices(est: &[f64], reference: &[f64]) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::LengthMismatch {
            est: est.len(),
            reference: reference.len(),
        });
    }
    if est.is_empty() {
        return Err(Error::SilentReference);
    }
    let n = est.len() as f64;
    let me = est.iter().sum::<f64>() / n;
    let mr = reference.iter().sum::<f64>() / n;
    let mut dot = 0.0;
    let mut rr = 0.0;
    for (&e, &r) in est.iter().zip(reference) {
        dot += (e - me) * (r - mr);
        rr += (r - mr) * (r - mr);
    }
    if rr <= f64::MIN_POSITIVE {
        return Err(Error::SilentReference);
    }
    let alpha = dot / rr;
    let mut target = 0.0;
    let mut noise = 0.0;
    for (&e, &r) in est.iter().zip(reference) {
        let s = alpha * (r - mr);
        let d = (e - me) - s;
        target += s * s;
        noise += d * d;
    }
    if noise == 0.0 {
        return Ok(SI_SDR_CAP_DB);
    }
    Ok((10.0 * (target / noise).log10()).min(SI_SDR_CAP_DB))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UttScore {
    pub id: String,
    pub si_sdr_db: f64,
    pub si_sdr_mix_db: f64,
    pub improvement_db: f64,
    pub same_gender: bool,
}

impl UttScore {
    pub fn new(id: impl Into<String>, si_sdr_db: f64, si_sdr_mix_db: f64, same_gender: bool) -> Self {
        Self {
            id: id.into(),
            si_sdr_db,
            si_sdr_mix_db,
            improvement_db: si_sdr_db - si_sdr_mix_db,
            same_gender,
        }
    }

    /// Score an estimate and the unprocessed mixture against the reference.
    pub fn score(
        id: impl Into<String>,
        est: &Waveform,
        mixture: &Waveform,
        reference: &Waveform,
        same_gender: bool,
    ) -> Result<Self> {
        Ok(Self::new(id, si_sdr(est, reference)?, si_sdr(mixture, reference)?, same_gender))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub mean_si_sdr_db: f64,
    pub mean_si_sdr_mix_db: f64,
    pub mean_improvement_db: f64,
}

impl Aggregate {
    /// Plain per-utterance mean; `None` for an empty partition.
    fn over<'a>(scores: impl Iterator<Item = &'a UttScore>) -> Option<Self> {
        let (mut n, mut s, mut m, mut i) = (0usize, 0.0, 0.0, 0.0);
        for u in scores {
            n += 1;
            s += u.si_sdr_db;
            m += u.si_sdr_mix_db;
            i += u.improvement_db;
        }
        (n > 0).then(|| {
            let k = n as f64;
            Aggregate {
                count: n,
                mean_si_sdr_db: s / k,
                mean_si_sdr_mix_db: m / k,
                mean_improvement_db: i / k,
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub all: Option<Aggregate>,
    pub diff_gender: Option<Aggregate>,
    pub same_gender: Option<Aggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub aggregates: Aggregates,
    pub per_utt: Vec<UttScore>,
}

impl EvalReport {
    pub fn from_scores(per_utt: Vec<UttScore>) -> Self {
        let aggregates = Aggregates {
            all: Aggregate::over(per_utt.iter()),
            diff_gender: Aggregate::over(per_utt.iter().filter(|u| !u.same_gender)),
            same_gender: Aggregate::over(per_utt.iter().filter(|u| u.same_gender)),
        };
        Self { aggregates, per_utt }
    }

    pub fn mean_improvement_db(&self) -> Option<f64> {
        self.aggregates.all.as_ref().map(|a| a.mean_improvement_db)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Path of the extracted waveform for record `id`.
pub fn extraction_path(extracted_dir: impl AsRef<Path>, id: &str) -> std::path::PathBuf {
    extracted_dir.as_ref().join(format!("{id}.wav"))
}

/// Score `<extracted_dir>/<record-id>.wav` against each record's reference.
pub fn evaluate(
    manifest: &Manifest,
    extracted_dir: impl AsRef<Path>,
    exec: Execution,
) -> Result<EvalReport> {
    let extracted_dir = extracted_dir.as_ref();
    let scores = exec.map(&manifest.records, |rec| -> Result<UttScore> {
        let id = rec.id();
        let path = extraction_path(extracted_dir, &id);
        if !path.is_file() {
            return Err(Error::MissingExtraction(id));
        }
        let est = audio_io::read_wav(&path)?;
        let mix = audio_io::read_wav(manifest.resolve(&rec.mixture))?;
        let reference = audio_io::read_wav(manifest.resolve(&rec.target_ref))?;
        UttScore::score(id, &est, &mix, &reference, rec.same_gender())
    });
    Ok(EvalReport::from_scores(
        scores.into_iter().collect::<Result<Vec<_>>>()?,
    ))
}

/// Mean SI-SDR per condition: a "Mixture" row from the first report's
/// unprocessed scores, then one row per named system.
pub fn summary_table(systems: &[(&str, &EvalReport)]) -> String {
    fn cell(a: &Option<Aggregate>, pick: fn(&Aggregate) -> f64) -> String {
        a.as_ref().map_or_else(|| "-".to_string(), |a| format!("{:.2}", pick(a)))
    }
    let mut out = String::new();
    let _ = writeln!(out, "SI-SDR (dB)");
    let _ = writeln!(out, "{:<20} {:>8} {:>8} {:>8}", "Method", "All", "Diff.", "Same");
    let mut row = |name: &str, r: &EvalReport, pick: fn(&Aggregate) -> f64| {
        let a = &r.aggregates;
        let _ = writeln!(
            out,
            "{:<20} {:>8} {:>8} {:>8}",
            name,
            cell(&a.all, pick),
            cell(&a.diff_gender, pick),
            cell(&a.same_gender, pick)
        );
    };
    if let Some((_, first)) = systems.first() {
        row("Mixture", first, |a| a.mean_si_sdr_mix_db);
    }
    for (name, report) in systems {
        row(name, report, |a| a.mean_si_sdr_db);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn wave(x: Vec<f64>) -> Waveform {
        Waveform::new(x, 8000)
    }

    #[test]
    fn identical_and_scaled_estimates_hit_cap() {
        let r = wave(noise(1000, 1));
        assert_eq!(si_sdr(&r, &r).unwrap(), SI_SDR_CAP_DB);
        let twice = wave(r.samples.iter().map(|x| 2.0 * x).collect());
        assert_eq!(si_sdr(&twice, &r).unwrap(), SI_SDR_CAP_DB);
    }

    #[test]
    fn orthogonal_noise_of_equal_energy_is_zero_db() {
        let r0 = noise(2000, 2);
        let mr = r0.iter().sum::<f64>() / 2000.0;
        let r: Vec<f64> = r0.iter().map(|x| x - mr).collect();
        let n0 = noise(2000, 3);
        let mn = n0.iter().sum::<f64>() / 2000.0;
        let mut n: Vec<f64> = n0.iter().map(|x| x - mn).collect();
        // Gram-Schmidt against r, then match energy
        let rr: f64 = r.iter().map(|x| x * x).sum();
        let nr: f64 = n.iter().zip(&r).map(|(a, b)| a * b).sum();
        for (v, rv) in n.iter_mut().zip(&r) {
            *v -= nr / rr * rv;
        }
        let nn: f64 = n.iter().map(|x| x * x).sum();
        let scale = (rr / nn).sqrt();
        let est: Vec<f64> = r.iter().zip(&n).map(|(a, b)| a + scale * b).collect();
        let v = si_sdr_slices(&est, &r).unwrap();
        assert!(v.abs() < 1e-9, "{v}");
    }

    #[test]
    fn scale_invariance() {
        let r = noise(500, 4);
        let e: Vec<f64> = r.iter().zip(noise(500, 5)).map(|(a, b)| a + 0.3 * b).collect();
        let base = si_sdr_slices(&e, &r).unwrap();
        for alpha in [0.01, 0.5, 3.0, 1000.0] {
            let scaled: Vec<f64> = e.iter().map(|x| alpha * x).collect();
            assert!((si_sdr_slices(&scaled, &r).unwrap() - base).abs() <= 1e-9);
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(
            si_sdr_slices(&[1.0, 2.0], &[1.0]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            si_sdr_slices(&[1.0, 2.0], &[0.5, 0.5]),
            Err(Error::SilentReference)
        ));
    }

    #[test]
    fn partitions_and_means() {
        let scores = vec![
            UttScore::new("a", 10.0, 2.0, true),
            UttScore::new("b", 6.0, 1.0, false),
            UttScore::new("c", 8.0, 0.0, true),
        ];
        let r = EvalReport::from_scores(scores);
        let all = r.aggregates.all.as_ref().unwrap();
        assert_eq!(all.count, 3);
        assert_eq!(all.mean_si_sdr_db, 8.0);
        assert_eq!(all.mean_improvement_db, 7.0);
        let same = r.aggregates.same_gender.as_ref().unwrap();
        let diff = r.aggregates.diff_gender.as_ref().unwrap();
        assert_eq!(same.count + diff.count, all.count);
        for u in &r.per_utt {
            assert_eq!(u.improvement_db, u.si_sdr_db - u.si_sdr_mix_db);
        }

        let only_same = EvalReport::from_scores(vec![UttScore::new("x", 1.0, 1.0, true)]);
        assert!(only_same.aggregates.diff_gender.is_none());
        let json = serde_json::to_value(&only_same).unwrap();
        assert!(json["aggregates"]["diff_gender"].is_null());
        let table = summary_table(&[("System", &only_same)]);
        assert!(table.contains("Mixture"));
        assert!(table.lines().nth(3).unwrap().contains('-'));
    }
}
