//! Quick numerical self-checks of a build: STFT reconstruction, delta
//! identities, loss gradients and network gradients.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::audio_io::Waveform;
use crate::error::Result;
use crate::losses::{self, LossKind, LossTargets, LossWeights};
use crate::net::{Mode, Model, NetConfig, Sample, ScalePreset};
use crate::stft::{StftConfig, StftPlan};
use crate::temporal;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed error.
    pub value: f64,
    pub tolerance: f64,
}

impl Check {
    fn new(name: &'static str, value: f64, tolerance: f64) -> Self {
        Self {
            name,
            passed: value <= tolerance,
            value,
            tolerance,
        }
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn random(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(lo..hi))
}

fn stft_round_trip(rng: &mut ChaCha8Rng) -> Result<Check> {
    let plan = StftPlan::new(StftConfig::default())?;
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let len = rng.random_range(4000..24000);
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = plan.istft(&plan.stft(&Waveform::new(x.clone(), 8000))?)?;
        for (a, b) in x.iter().zip(&y.samples) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(Check::new("stft_round_trip", worst, 1e-6))
}

fn delta_identities(rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    let w = temporal::DEFAULT_WINDOW;
    let constant = Array2::from_elem((9, 3), 2.5);
    let c = temporal::delta(&constant, w)?.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let ramp = Array2::from_shape_fn((12, 2), |(t, _)| t as f64);
    let d = temporal::delta(&ramp, w)?;
    let r = (w..12 - w)
        .flat_map(|t| d.row(t).to_vec())
        .fold(0.0f64, |m, v| m.max((v - 1.0).abs()));
    let x = random(7, 5, -1.0, 1.0, rng);
    let y = random(7, 5, -1.0, 1.0, rng);
    let lhs = (temporal::delta(&x, w)? * &y).sum();
    let rhs = (&x * &temporal::delta_adjoint(&y, w)?).sum();
    Ok(vec![
        Check::new("delta_constant_is_zero", c, 0.0),
        Check::new("delta_ramp_is_one", r, 1e-12),
        Check::new("delta_adjoint", (lhs - rhs).abs(), 1e-10),
    ])
}

fn loss_gradients(rng: &mut ChaCha8Rng) -> Result<Check> {
    let (t, f) = (8, 6);
    let w = LossWeights::default();
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let mask = random(t, f, 0.0, 1.0, rng);
        let mix = random(t, f, 0.1, 2.0, rng);
        let psm = random(t, f, -0.5, 2.0, rng);
        let ibm = psm.mapv(|v| f64::from(v > 0.5));
        let tg = LossTargets { mix_mag: &mix, psm: &psm, ibm: &ibm };
        for kind in [LossKind::Mal, LossKind::Msal, LossKind::Mtsal] {
            let (_, g) = losses::loss_and_grad(kind, &mask, &tg, &w)?;
            for _ in 0..6 {
                let (i, j) = (rng.random_range(0..t), rng.random_range(0..f));
                let h = 1e-5;
                let mut m = mask.clone();
                m[[i, j]] += h;
                let up = losses::loss_value(kind, &m, &tg, &w)?;
                m[[i, j]] -= 2.0 * h;
                let down = losses::loss_value(kind, &m, &tg, &w)?;
                worst = worst.max(rel_err(g[[i, j]], (up - down) / (2.0 * h)));
            }
        }
    }
    Ok(Check::new("loss_gradients", worst, 1e-5))
}

fn net_gradients(mode: Mode, name: &'static str, rng: &mut ChaCha8Rng) -> Result<Check> {
    let cfg = NetConfig {
        mode,
        aux_hidden: 8,
        mask_hidden: 8,
        embed_dim: 4,
        n_bins: 9,
        n_sublayers: 4,
        scale_preset: ScalePreset::Custom,
    };
    let model = Model::new(cfg, rng.random())?;
    let mix = random(5, 9, 0.1, 2.0, rng);
    let enroll = random(6, 9, 0.1, 2.0, rng);
    let psm = random(5, 9, -0.5, 2.0, rng);
    let ibm = psm.mapv(|v| f64::from(v > 0.7));
    let sample = Sample { mix_mag: &mix, enroll_mag: &enroll, psm: &psm, ibm: &ibm };
    let w = LossWeights::default();
    let (_, g) = model.loss_and_gradients(&sample, LossKind::Mtsal, &w)?;
    let mut worst = 0.0f64;
    let h = 1e-4;
    for _ in 0..30 {
        let i = rng.random_range(0..model.param_count());
        let mut p = model.clone();
        p.params[i] += h;
        let up = p.loss(&sample, LossKind::Mtsal, &w)?;
        p.params[i] -= 2.0 * h;
        let down = p.loss(&sample, LossKind::Mtsal, &w)?;
        worst = worst.max(rel_err(g.values[i], (up - down) / (2.0 * h)));
    }
    Ok(Check::new(name, worst, 1e-3))
}

/// Run every check with randomness drawn from `seed`.
pub fn run(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = vec![stft_round_trip(&mut rng)?];
    checks.extend(delta_identities(&mut rng)?);
    checks.push(loss_gradients(&mut rng)?);
    checks.push(net_gradients(Mode::Concat, "net_gradients_concat", &mut rng)?);
    checks.push(net_gradients(Mode::Adapt, "net_gradients_adapt", &mut rng)?);
    Ok(checks)
}
