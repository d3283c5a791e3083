//! Two-speaker mixture simulation from a directory-per-speaker WAV corpus.
//!
//! Each record draws two distinct speakers; the first drawn is the target.
//! The interferer is looped or cut to the target's length and scaled to the
//! requested SNR, and a second utterance of the target serves as the
//! enrollment. Records are drawn from a ChaCha stream keyed by
//! (seed, record index), so they can be synthesized in any order.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio_io::{self, Waveform, EXPECTED_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::exec::Execution;

/// Mixtures whose peak exceeds this are attenuated, together with the reference.
pub const PEAK_LIMIT: f64 = 0.9;
pub const MIN_RMS: f64 = 1e-6;
pub const MANIFEST_NAME: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gender {
    M,
    F,
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::M => "M",
            Gender::F => "F",
        })
    }
}

impl std::str::FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "M" | "m" => Ok(Gender::M),
            "F" | "f" => Ok(Gender::F),
            other => Err(Error::Data(format!("gender must be M or F, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Speaker {
    pub gender: Gender,
    pub utterances: Vec<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusIndex {
    pub speakers: BTreeMap<String, Speaker>,
    /// Speakers skipped for having fewer than two utterances.
    pub dropped: usize,
}

/// One simulated example, as stored in a manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureRecord {
    pub mixture: String,
    pub target_ref: String,
    pub enroll: String,
    pub target_spk: String,
    pub interf_spk: String,
    pub target_gender: Gender,
    pub interf_gender: Gender,
    pub snr_db: f64,
    pub gain: f64,
}

impl MixtureRecord {
    /// Record identifier: the mixture file's stem.
    pub fn id(&self) -> String {
        Path::new(&self.mixture)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.mixture.clone())
    }

    pub fn same_gender(&self) -> bool {
        self.target_gender == self.interf_gender
    }
}

/// Manifest records together with the directory their relative paths hang off.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub dir: PathBuf,
    pub records: Vec<MixtureRecord>,
}

impl Manifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: MixtureRecord = serde_json::from_str(&line).map_err(|e| {
                Error::Data(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
            records.push(rec);
        }
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { dir, records })
    }

    pub fn write(path: impl AsRef<Path>, records: &[MixtureRecord]) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for rec in records {
            let line = serde_json::to_string(rec).map_err(|e| Error::Json {
                path: path.to_path_buf(),
                source: e,
            })?;
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    /// Relative paths are taken relative to the manifest's directory.
    pub fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir.join(p)
        }
    }
}

/// Parse "<speaker-id> <M|F>" lines; blank lines and `#` comments are skipped.
pub fn read_gender_map(path: impl AsRef<Path>) -> Result<BTreeMap<String, Gender>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(id), Some(g), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Data(format!(
                "{}:{}: expected \"<speaker-id> <M|F>\"",
                path.display(),
                lineno + 1
            )));
        };
        map.insert(id.to_string(), g.parse()?);
    }
    Ok(map)
}

/// Index `root/<speaker-id>/<utt>.wav`.
pub fn index_corpus(root: impl AsRef<Path>, gender_map: impl AsRef<Path>) -> Result<CorpusIndex> {
    let root = root.as_ref();
    let genders = read_gender_map(gender_map)?;
    let root = root.canonicalize().map_err(|e| Error::io(root, e))?;
    let mut dirs: Vec<_> = fs::read_dir(&root)
        .map_err(|e| Error::io(&root, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();

    let mut index = CorpusIndex::default();
    for dir in dirs {
        let id = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut utterances: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                p.is_file()
                    && p.extension()
                        .is_some_and(|x| x.eq_ignore_ascii_case("wav"))
            })
            .collect();
        if utterances.is_empty() {
            continue;
        }
        let gender = *genders.get(&id).ok_or_else(|| Error::MissingGender(id.clone()))?;
        if utterances.len() < 2 {
            log::warn!("speaker {id} has a single utterance; skipped");
            index.dropped += 1;
            continue;
        }
        utterances.sort();
        index.speakers.insert(id, Speaker { gender, utterances });
    }
    if index.speakers.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(index)
}

#[derive(Debug, Clone)]
pub struct MixedPair {
    pub mixture: Waveform,
    pub target_aligned: Waveform,
    pub interf_scaled: Waveform,
    /// Interferer scale that sets the SNR.
    pub beta: f64,
    /// Shared peak-limiting gain (1.0 when not applied).
    pub gain: f64,
}

/// Loop or cut `x` to exactly `len` samples.
pub fn fit_length(x: &[f64], len: usize) -> Vec<f64> {
    x.iter().copied().cycle().take(len).collect()
}

pub fn snr_db(signal: &[f64], noise: &[f64]) -> f64 {
    let s = audio_io::rms(signal);
    let n = audio_io::rms(noise);
    20.0 * (s / n).log10()
}

fn check_rate(w: &Waveform) -> Result<()> {
    if w.sample_rate_hz != EXPECTED_SAMPLE_RATE {
        return Err(Error::SampleRate {
            expected: EXPECTED_SAMPLE_RATE,
            found: w.sample_rate_hz,
        });
    }
    Ok(())
}

/// Mix `interf` into `target` at `snr_db`; only the interferer is scaled.
pub fn mix_pair(target: &Waveform, interf: &Waveform, snr_db: f64) -> Result<MixedPair> {
    check_rate(target)?;
    check_rate(interf)?;
    let t_rms = target.rms();
    if t_rms <= MIN_RMS {
        return Err(Error::SilentSignal(t_rms));
    }
    let fitted = fit_length(&interf.samples, target.len());
    let i_rms = audio_io::rms(&fitted);
    if i_rms <= MIN_RMS {
        return Err(Error::SilentSignal(i_rms));
    }
    let beta = t_rms / (i_rms * 10f64.powf(snr_db / 20.0));
    let mut tgt = target.samples.clone();
    let mut itf: Vec<f64> = fitted.iter().map(|x| beta * x).collect();
    let mut mix: Vec<f64> = tgt.iter().zip(&itf).map(|(a, b)| a + b).collect();

    let peak = mix.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let gain = if peak > PEAK_LIMIT { PEAK_LIMIT / peak } else { 1.0 };
    if gain != 1.0 {
        for v in mix.iter_mut().chain(tgt.iter_mut()).chain(itf.iter_mut()) {
            *v *= gain;
        }
    }
    let rate = target.sample_rate_hz;
    Ok(MixedPair {
        mixture: Waveform::new(mix, rate),
        target_aligned: Waveform::new(tgt, rate),
        interf_scaled: Waveform::new(itf, rate),
        beta,
        gain,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationConfig {
    pub n: usize,
    pub snr_lo: f64,
    pub snr_hi: f64,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n: 100,
            snr_lo: 0.0,
            snr_hi: 5.0,
            seed: 0,
        }
    }
}

/// Which utterances one record combines, before any audio is read.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub target_spk: String,
    pub interf_spk: String,
    pub target_utt: PathBuf,
    pub interf_utt: PathBuf,
    pub enroll_utt: PathBuf,
    pub snr_db: f64,
}

/// Random stream for record `index` of a run seeded with `seed`.
pub fn record_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn draw_record(index: &CorpusIndex, cfg: &SimulationConfig, record: usize) -> Result<Draw> {
    let ids: Vec<&String> = index.speakers.keys().collect();
    if ids.len() < 2 {
        return Err(Error::InsufficientSpeakers(ids.len()));
    }
    let mut rng = record_rng(cfg.seed, record);
    let t = rng.random_range(0..ids.len());
    let mut i = rng.random_range(0..ids.len() - 1);
    if i >= t {
        i += 1;
    }
    let target = &index.speakers[ids[t]];
    let interf = &index.speakers[ids[i]];
    let tu = rng.random_range(0..target.utterances.len());
    let mut eu = rng.random_range(0..target.utterances.len() - 1);
    if eu >= tu {
        eu += 1;
    }
    let iu = rng.random_range(0..interf.utterances.len());
    let snr_db = if cfg.snr_hi > cfg.snr_lo {
        rng.random_range(cfg.snr_lo..=cfg.snr_hi)
    } else {
        cfg.snr_lo
    };
    Ok(Draw {
        target_spk: ids[t].clone(),
        interf_spk: ids[i].clone(),
        target_utt: target.utterances[tu].clone(),
        interf_utt: interf.utterances[iu].clone(),
        enroll_utt: target.utterances[eu].clone(),
        snr_db,
    })
}

/// Synthesize `cfg.n` mixtures into `out_dir`, writing `mix_NNNNN.wav`,
/// `tgt_NNNNN.wav`, and the manifest. Returns the records in index order.
pub fn simulate_set(
    index: &CorpusIndex,
    cfg: &SimulationConfig,
    out_dir: impl AsRef<Path>,
    exec: Execution,
) -> Result<Vec<MixtureRecord>> {
    let out_dir = out_dir.as_ref();
    if index.speakers.len() < 2 {
        return Err(Error::InsufficientSpeakers(index.speakers.len()));
    }
    if !(cfg.snr_lo <= cfg.snr_hi) {
        return Err(Error::InvalidConfig(format!(
            "snr range [{}, {}] is empty",
            cfg.snr_lo, cfg.snr_hi
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let records = exec.map_range(cfg.n, |k| -> Result<MixtureRecord> {
        let draw = draw_record(index, cfg, k)?;
        let target = audio_io::read_wav(&draw.target_utt)?;
        let interf = audio_io::read_wav(&draw.interf_utt)?;
        let mixed = mix_pair(&target, &interf, draw.snr_db)?;
        let mix_name = format!("mix_{k:05}.wav");
        let tgt_name = format!("tgt_{k:05}.wav");
        audio_io::write_wav(out_dir.join(&mix_name), &mixed.mixture)?;
        audio_io::write_wav(out_dir.join(&tgt_name), &mixed.target_aligned)?;
        let spk = |id: &str| &index.speakers[id];
        Ok(MixtureRecord {
            mixture: mix_name,
            target_ref: tgt_name,
            enroll: draw.enroll_utt.to_string_lossy().into_owned(),
            target_gender: spk(&draw.target_spk).gender,
            interf_gender: spk(&draw.interf_spk).gender,
            target_spk: draw.target_spk,
            interf_spk: draw.interf_spk,
            snr_db: draw.snr_db,
            gain: mixed.gain,
        })
    });
    let records = records.into_iter().collect::<Result<Vec<_>>>()?;
    Manifest::write(out_dir.join(MANIFEST_NAME), &records)?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tone(freq: f64, amp: f64, len: usize) -> Waveform {
        Waveform::new(
            (0..len)
                .map(|n| amp * (2.0 * PI * freq * n as f64 / 8000.0).sin())
                .collect(),
            8000,
        )
    }

    fn make_corpus(dir: &Path, speakers: &[(&str, Gender, usize)]) -> PathBuf {
        let root = dir.join("corpus");
        let mut map = String::new();
        for (s, (id, g, n)) in speakers.iter().enumerate() {
            fs::create_dir_all(root.join(id)).unwrap();
            for u in 0..*n {
                let w = tone(200.0 + 97.0 * s as f64 + 13.0 * u as f64, 0.3, 1600 + 200 * u);
                audio_io::write_wav(root.join(id).join(format!("u{u}.wav")), &w).unwrap();
            }
            map.push_str(&format!("{id} {g}\n"));
        }
        fs::write(dir.join("genders.txt"), map).unwrap();
        root
    }

    #[test]
    fn indexes_and_drops_single_utterance_speakers() {
        let dir = tempfile::tempdir().unwrap();
        let root = make_corpus(dir.path(), &[("a", Gender::M, 3), ("b", Gender::F, 3)]);
        let idx = index_corpus(&root, dir.path().join("genders.txt")).unwrap();
        assert_eq!(idx.speakers.len(), 2);
        assert_eq!(idx.dropped, 0);

        let root = make_corpus(
            dir.path(),
            &[("a", Gender::M, 3), ("b", Gender::F, 3), ("c", Gender::F, 1)],
        );
        let idx = index_corpus(&root, dir.path().join("genders.txt")).unwrap();
        assert_eq!(idx.speakers.len(), 2);
        assert_eq!(idx.dropped, 1);
    }

    #[test]
    fn missing_gender_and_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let root = make_corpus(dir.path(), &[("a", Gender::M, 2), ("b", Gender::F, 2)]);
        fs::write(dir.path().join("genders.txt"), "a M\n").unwrap();
        assert!(matches!(
            index_corpus(&root, dir.path().join("genders.txt")),
            Err(Error::MissingGender(id)) if id == "b"
        ));

        let empty = dir.path().join("empty");
        fs::create_dir_all(&empty).unwrap();
        assert!(matches!(
            index_corpus(&empty, dir.path().join("genders.txt")),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn beta_for_equal_rms_inputs() {
        let t = tone(300.0, 0.2, 4000);
        let i = tone(700.0, 0.2, 4000);
        let m = mix_pair(&t, &i, 0.0).unwrap();
        assert!((m.beta - 1.0).abs() < 1e-9);
        let m = mix_pair(&t, &i, 6.02).unwrap();
        assert!((m.beta - 0.5).abs() < 1e-3);
    }

    #[test]
    fn mixture_decomposes_and_hits_snr() {
        let t = tone(300.0, 0.6, 5000);
        let i = tone(900.0, 0.1, 1234);
        for snr in [0.0, 2.5, 5.0, -3.0] {
            let m = mix_pair(&t, &i, snr).unwrap();
            assert_eq!(m.mixture.len(), t.len());
            for k in 0..m.mixture.len() {
                let sum = m.target_aligned.samples[k] + m.interf_scaled.samples[k];
                assert!((m.mixture.samples[k] - sum).abs() <= 1e-9);
            }
            let measured = snr_db(&m.target_aligned.samples, &m.interf_scaled.samples);
            assert!((measured - snr).abs() <= 1e-6);
            assert!(m.mixture.peak() <= PEAK_LIMIT + 1e-12);
        }
    }

    #[test]
    fn peak_limit_applies_shared_gain() {
        let t = tone(300.0, 0.8, 4000);
        let i = tone(310.0, 0.8, 4000);
        let m = mix_pair(&t, &i, 0.0).unwrap();
        assert!(m.gain < 1.0);
        assert!((m.mixture.peak() - PEAK_LIMIT).abs() < 1e-12);
        assert!((m.target_aligned.samples[5] - m.gain * t.samples[5]).abs() < 1e-15);

        let quiet = mix_pair(&tone(300.0, 0.1, 4000), &tone(700.0, 0.1, 4000), 0.0).unwrap();
        assert_eq!(quiet.gain, 1.0);
    }

    #[test]
    fn silent_and_wrong_rate_inputs() {
        let t = Waveform::new(vec![0.0; 100], 8000);
        let i = tone(300.0, 0.2, 100);
        assert!(matches!(mix_pair(&t, &i, 0.0), Err(Error::SilentSignal(_))));
        let r = Waveform::new(i.samples.clone(), 16000);
        assert!(matches!(mix_pair(&i, &r, 0.0), Err(Error::SampleRate { .. })));
    }

    #[test]
    fn interferer_is_looped() {
        assert_eq!(fit_length(&[1.0, 2.0, 3.0], 7), vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0]);
        assert_eq!(fit_length(&[1.0, 2.0, 3.0], 2), vec![1.0, 2.0]);
    }

    #[test]
    fn simulate_is_deterministic_and_well_formed() {
        let dir = tempfile::tempdir().unwrap();
        let root = make_corpus(
            dir.path(),
            &[
                ("m1", Gender::M, 3),
                ("m2", Gender::M, 2),
                ("f1", Gender::F, 3),
                ("f2", Gender::F, 2),
            ],
        );
        let idx = index_corpus(&root, dir.path().join("genders.txt")).unwrap();
        let cfg = SimulationConfig { n: 100, seed: 7, ..Default::default() };
        let a = simulate_set(&idx, &cfg, dir.path().join("a"), Execution::Parallel).unwrap();
        let b = simulate_set(&idx, &cfg, dir.path().join("b"), Execution::Sequential).unwrap();
        assert_eq!(a, b);
        let ma = fs::read(dir.path().join("a").join(MANIFEST_NAME)).unwrap();
        let mb = fs::read(dir.path().join("b").join(MANIFEST_NAME)).unwrap();
        assert_eq!(ma, mb);
        assert_eq!(
            fs::read(dir.path().join("a/mix_00042.wav")).unwrap(),
            fs::read(dir.path().join("b/mix_00042.wav")).unwrap()
        );

        let manifest = Manifest::read(dir.path().join("a").join(MANIFEST_NAME)).unwrap();
        assert_eq!(manifest.records, a);
        let mut same = 0;
        for r in &a {
            assert_ne!(r.target_spk, r.interf_spk);
            assert!((0.0..=5.0).contains(&r.snr_db));
            assert!(!r.enroll.is_empty());
            assert!(manifest.resolve(&r.mixture).exists());
            assert!(manifest.resolve(&r.enroll).exists());
            if r.same_gender() {
                same += 1;
            }
        }
        assert!(same > 0 && same < a.len());
    }

    #[test]
    fn enrollment_differs_from_reference() {
        let dir = tempfile::tempdir().unwrap();
        let root = make_corpus(dir.path(), &[("a", Gender::M, 2), ("b", Gender::F, 2)]);
        let idx = index_corpus(&root, dir.path().join("genders.txt")).unwrap();
        let cfg = SimulationConfig { n: 200, seed: 3, ..Default::default() };
        for k in 0..cfg.n {
            let d = draw_record(&idx, &cfg, k).unwrap();
            assert_ne!(d.enroll_utt, d.target_utt);
            assert_ne!(d.target_spk, d.interf_spk);
        }
    }

    #[test]
    fn needs_two_speakers() {
        let mut idx = CorpusIndex::default();
        idx.speakers.insert(
            "solo".into(),
            Speaker { gender: Gender::F, utterances: vec!["a".into(), "b".into()] },
        );
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            simulate_set(&idx, &SimulationConfig::default(), dir.path(), Execution::Sequential),
            Err(Error::InsufficientSpeakers(1))
        ));
    }
}
