//! Oracle masks, the phase-sensitive target, and masked resynthesis.

use ndarray::{Array2, Zip};

use crate::audio_io::Waveform;
use crate::error::{check_same_shape, Result};
use crate::stft::{self, Spectrogram};

/// Guards the oracle PSM ratio in silent bins.
pub const PSM_EPS: f64 = 1e-8;

/// Real-valued T×F mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask(pub Array2<f64>);

impl Mask {
    pub fn ones(shape: (usize, usize)) -> Self {
        Mask(Array2::ones(shape))
    }

    pub fn zeros(shape: (usize, usize)) -> Self {
        Mask(Array2::zeros(shape))
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn dim(&self) -> (usize, usize) {
        self.0.dim()
    }
}

/// 1 where the target magnitude strictly exceeds the interference, else 0.
pub fn ibm(target_mag: &Array2<f64>, interf_mag: &Array2<f64>) -> Result<Mask> {
    check_same_shape(target_mag, interf_mag)?;
    Ok(Mask(Zip::from(target_mag).and(interf_mag).map_collect(
        |&t, &i| if t > i { 1.0 } else { 0.0 },
    )))
}

/// Phase-sensitive magnitude target `|X|·cos(θ_y − θ_x)`.
pub fn psm_target(
    mix_mag: &Array2<f64>,
    tgt_mag: &Array2<f64>,
    mix_phase: &Array2<f64>,
    tgt_phase: &Array2<f64>,
) -> Result<Array2<f64>> {
    psm_target_with(mix_mag, tgt_mag, mix_phase, tgt_phase, false)
}

/// As [`psm_target`], optionally truncating the cosine to [0, 1].
pub fn psm_target_with(
    mix_mag: &Array2<f64>,
    tgt_mag: &Array2<f64>,
    mix_phase: &Array2<f64>,
    tgt_phase: &Array2<f64>,
    clamp_cos: bool,
) -> Result<Array2<f64>> {
    check_same_shape(mix_mag, tgt_mag)?;
    check_same_shape(mix_mag, mix_phase)?;
    check_same_shape(mix_mag, tgt_phase)?;
    Ok(Zip::from(tgt_mag)
        .and(mix_phase)
        .and(tgt_phase)
        .map_collect(|&x, &py, &px| {
            let c = (py - px).cos();
            x * if clamp_cos { c.clamp(0.0, 1.0) } else { c }
        }))
}

/// Oracle PSM as a mask: `clamp(psm_target / max(|Y|, ε), 0, 1)`.
pub fn oracle_psm(mix: &Spectrogram, target: &Spectrogram) -> Result<Mask> {
    let mix_mag = mix.magnitude();
    let psm = psm_target(&mix_mag, &target.magnitude(), &mix.phase(), &target.phase())?;
    Ok(Mask(Zip::from(&psm).and(&mix_mag).map_collect(|&p, &y| {
        (p / y.max(PSM_EPS)).clamp(0.0, 1.0)
    })))
}

/// Scale the mixture magnitude by the mask, keep the mixture phase, invert.
pub fn apply_mask(mix: &Spectrogram, m: &Mask) -> Result<Waveform> {
    let est = masked_spectrogram(mix, m)?;
    stft::istft(&est)
}

/// `M·|Y|·exp(i∠Y)`, which for a real mask is just `M·Y`.
pub fn masked_spectrogram(mix: &Spectrogram, m: &Mask) -> Result<Spectrogram> {
    check_same_shape(&mix.values, &m.0)?;
    let mut est = mix.clone();
    Zip::from(&mut est.values)
        .and(&m.0)
        .for_each(|y, &g| *y *= g);
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::evalkit::si_sdr;
    use crate::stft::StftConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random(t: usize, f: usize, lo: f64, hi: f64, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((t, f), |_| rng.random_range(lo..hi))
    }

    fn tone(freq: f64, amp: f64, len: usize) -> Waveform {
        Waveform::new(
            (0..len)
                .map(|n| amp * (2.0 * PI * freq * n as f64 / 8000.0).sin())
                .collect(),
            8000,
        )
    }

    #[test]
    fn ibm_cases() {
        let i = random(4, 5, 0.1, 1.0, 1);
        assert!(ibm(&(&i * 2.0), &i).unwrap().0.iter().all(|&v| v == 1.0));
        assert!(ibm(&i, &i).unwrap().0.iter().all(|&v| v == 0.0));

        let t = random(6, 7, 0.0, 1.0, 2);
        assert!(matches!(ibm(&t, &i), Err(Error::ShapeMismatch(..))));

        let u = random(6, 7, 0.0, 1.0, 3);
        let m = ibm(&t, &u).unwrap();
        for ((a, b), v) in t.iter().zip(u.iter()).zip(m.0.iter()) {
            assert_eq!(*v, if a > b { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn psm_target_cases() {
        let y = random(3, 4, 0.0, 2.0, 4);
        let x = random(3, 4, 0.0, 2.0, 5);
        let p = random(3, 4, -PI, PI, 6);
        assert_eq!(psm_target(&y, &x, &p, &p).unwrap(), x);

        let shifted = &p + PI / 2.0;
        let q = psm_target(&y, &x, &shifted, &p).unwrap();
        assert!(q.iter().all(|v| v.abs() < 1e-12));

        let r = random(3, 4, -PI, PI, 7);
        let q = psm_target(&y, &x, &r, &p).unwrap();
        for (a, b) in q.iter().zip(x.iter()) {
            assert!(a.abs() <= *b);
        }
        let clamped = psm_target_with(&y, &x, &r, &p, true).unwrap();
        assert!(clamped.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn interference_free_mixture_has_unit_oracle() {
        let cfg = StftConfig::default();
        let x = tone(440.0, 0.5, 2000);
        let s = stft::stft(&x, &cfg).unwrap();
        let mag = s.magnitude();
        let tgt = psm_target(&mag, &mag, &s.phase(), &s.phase()).unwrap();
        assert_eq!(tgt, mag);
        let m = oracle_psm(&s, &s).unwrap();
        for (&v, &y) in m.0.iter().zip(mag.iter()) {
            if y > PSM_EPS {
                assert!((v - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_and_zero_masks() {
        let cfg = StftConfig::default();
        let y = Waveform::new(
            tone(300.0, 0.4, 3000)
                .samples
                .iter()
                .zip(&tone(1234.0, 0.3, 3000).samples)
                .map(|(a, b)| a + b)
                .collect(),
            8000,
        );
        let s = stft::stft(&y, &cfg).unwrap();
        let back = apply_mask(&s, &Mask::ones(s.values.dim())).unwrap();
        for (a, b) in back.samples.iter().zip(&y.samples) {
            assert!((a - b).abs() <= 1e-6);
        }
        let silent = apply_mask(&s, &Mask::zeros(s.values.dim())).unwrap();
        assert_eq!(silent.len(), y.len());
        assert!(silent.samples.iter().all(|&v| v == 0.0));
        assert!(matches!(
            apply_mask(&s, &Mask::ones((2, 2))),
            Err(Error::ShapeMismatch(..))
        ));
    }

    #[test]
    fn oracle_psm_separates_two_tones() {
        let cfg = StftConfig::default();
        let target = tone(500.0, 0.3, 4000);
        let interf = tone(1700.0, 0.3, 4000);
        let mix = Waveform::new(
            target
                .samples
                .iter()
                .zip(&interf.samples)
                .map(|(a, b)| a + b)
                .collect(),
            8000,
        );
        let ms = stft::stft(&mix, &cfg).unwrap();
        let ts = stft::stft(&target, &cfg).unwrap();
        let m = oracle_psm(&ms, &ts).unwrap();
        assert!(m.0.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let est = apply_mask(&ms, &m).unwrap();
        let score = si_sdr(&est, &target).unwrap();
        let base = si_sdr(&mix, &target).unwrap();
        assert!(score >= 10.0, "oracle PSM SI-SDR {score}");
        assert!(base.abs() < 0.5);
    }

    #[test]
    fn apply_mask_is_linear_in_mask() {
        let cfg = StftConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let y = Waveform::new((0..1200).map(|_| rng.random_range(-0.5..0.5)).collect(), 8000);
        let s = stft::stft(&y, &cfg).unwrap();
        let (t, f) = s.values.dim();
        let m1 = Mask(random(t, f, -0.5, 1.5, 9));
        let m2 = Mask(random(t, f, -0.5, 1.5, 10));
        let sum = Mask(&m1.0 + &m2.0);
        let a = apply_mask(&s, &m1).unwrap();
        let b = apply_mask(&s, &m2).unwrap();
        let c = apply_mask(&s, &sum).unwrap();
        for i in 0..c.len() {
            assert!((c.samples[i] - a.samples[i] - b.samples[i]).abs() <= 1e-9);
        }
    }
}
