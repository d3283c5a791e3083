//! Training objectives over a single utterance and their gradients with
//! respect to the estimated mask.
//!
//! Every loss is a squared Frobenius norm divided by the frame count T:
//!
//! * MAL: `‖M − M_ibm‖² / T`
//! * MSAL: `‖M⊙|Y| − P‖² / T` where `P = |X|·cos(θ_y − θ_x)`
//! * MTSAL: MSAL plus `w_d·‖Δ(M⊙|Y|) − Δ(P)‖² / T` and
//!   `w_a·‖Δ²(M⊙|Y|) − Δ²(P)‖² / T`
//!
//! Δ is linear, so the temporal residuals are Δ and Δ² of the MSAL residual.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{check_same_shape, Error, Result};
use crate::temporal;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub w_d: f64,
    pub w_a: f64,
    /// Delta regression half-window.
    pub window: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_d: 4.5,
            w_a: 10.0,
            window: temporal::DEFAULT_WINDOW,
        }
    }
}

impl LossWeights {
    pub fn magnitude_only() -> Self {
        Self {
            w_d: 0.0,
            w_a: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w_d >= 0.0 && self.w_a >= 0.0) || self.window == 0 {
            return Err(Error::InvalidConfig(format!(
                "loss weights need w_d, w_a >= 0 and window >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum LossKind {
    Mal,
    Msal,
    Mtsal,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mal" => Ok(LossKind::Mal),
            "msal" => Ok(LossKind::Msal),
            "mtsal" => Ok(LossKind::Mtsal),
            other => Err(Error::InvalidConfig(format!("unknown loss {other}"))),
        }
    }
}

/// Per-utterance supervision: whichever targets the chosen loss needs.
#[derive(Debug, Clone)]
pub struct LossTargets<'a> {
    pub mix_mag: &'a Array2<f64>,
    pub psm: &'a Array2<f64>,
    pub ibm: &'a Array2<f64>,
}

fn frames(m: &Array2<f64>) -> Result<f64> {
    if m.nrows() == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(m.nrows() as f64)
}

fn sq_norm(a: &Array2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum()
}

pub fn mal(mask: &Array2<f64>, ibm: &Array2<f64>) -> Result<f64> {
    check_same_shape(mask, ibm)?;
    let t = frames(mask)?;
    Ok(Zip::from(mask)
        .and(ibm)
        .fold(0.0, |acc, &m, &b| acc + (m - b) * (m - b))
        / t)
}

pub fn mal_grad(mask: &Array2<f64>, ibm: &Array2<f64>) -> Result<Array2<f64>> {
    check_same_shape(mask, ibm)?;
    let scale = 2.0 / frames(mask)?;
    Ok(Zip::from(mask)
        .and(ibm)
        .map_collect(|&m, &b| scale * (m - b)))
}

fn residual(mask: &Array2<f64>, mix_mag: &Array2<f64>, psm: &Array2<f64>) -> Result<Array2<f64>> {
    check_same_shape(mask, mix_mag)?;
    check_same_shape(mask, psm)?;
    frames(mask)?;
    Ok(Zip::from(mask)
        .and(mix_mag)
        .and(psm)
        .map_collect(|&m, &y, &p| m * y - p))
}

pub fn msal(mask: &Array2<f64>, mix_mag: &Array2<f64>, psm: &Array2<f64>) -> Result<f64> {
    let e = residual(mask, mix_mag, psm)?;
    Ok(sq_norm(&e) / mask.nrows() as f64)
}

pub fn msal_grad(
    mask: &Array2<f64>,
    mix_mag: &Array2<f64>,
    psm: &Array2<f64>,
) -> Result<Array2<f64>> {
    mtsal_grad(mask, mix_mag, psm, &LossWeights::magnitude_only())
}

pub fn mtsal(
    mask: &Array2<f64>,
    mix_mag: &Array2<f64>,
    psm: &Array2<f64>,
    w: &LossWeights,
) -> Result<f64> {
    mtsal_with_grad(mask, mix_mag, psm, w, false).map(|(v, _)| v)
}

pub fn mtsal_grad(
    mask: &Array2<f64>,
    mix_mag: &Array2<f64>,
    psm: &Array2<f64>,
    w: &LossWeights,
) -> Result<Array2<f64>> {
    mtsal_with_grad(mask, mix_mag, psm, w, true).map(|(_, g)| g.expect("gradient requested"))
}

/// MTSAL value and, when asked, its gradient, sharing the residual work.
pub fn mtsal_with_grad(
    mask: &Array2<f64>,
    mix_mag: &Array2<f64>,
    psm: &Array2<f64>,
    w: &LossWeights,
    want_grad: bool,
) -> Result<(f64, Option<Array2<f64>>)> {
    w.validate()?;
    let e = residual(mask, mix_mag, psm)?;
    let t = mask.nrows() as f64;
    let mut value = sq_norm(&e) / t;
    // back-propagated residual: E + w_d·DᵀD E + w_a·(D²)ᵀD² E
    let mut back = want_grad.then(|| e.clone());

    if w.w_d > 0.0 || w.w_a > 0.0 {
        let d = temporal::delta(&e, w.window)?;
        if w.w_d > 0.0 {
            value += w.w_d * sq_norm(&d) / t;
            if let Some(b) = back.as_mut() {
                b.scaled_add(w.w_d, &temporal::delta_adjoint(&d, w.window)?);
            }
        }
        if w.w_a > 0.0 {
            let a = temporal::delta(&d, w.window)?;
            value += w.w_a * sq_norm(&a) / t;
            if let Some(b) = back.as_mut() {
                b.scaled_add(w.w_a, &temporal::accel_adjoint(&a, w.window)?);
            }
        }
    }

    let grad = back.map(|mut b| {
        Zip::from(&mut b)
            .and(mix_mag)
            .for_each(|g, &y| *g *= 2.0 / t * y);
        b
    });
    Ok((value, grad))
}

/// Loss value and mask gradient for the selected objective.
pub fn loss_and_grad(
    kind: LossKind,
    mask: &Array2<f64>,
    targets: &LossTargets<'_>,
    w: &LossWeights,
) -> Result<(f64, Array2<f64>)> {
    match kind {
        LossKind::Mal => Ok((mal(mask, targets.ibm)?, mal_grad(mask, targets.ibm)?)),
        LossKind::Msal => {
            let (v, g) =
                mtsal_with_grad(mask, targets.mix_mag, targets.psm, &LossWeights::magnitude_only(), true)?;
            Ok((v, g.expect("gradient requested")))
        }
        LossKind::Mtsal => {
            let (v, g) = mtsal_with_grad(mask, targets.mix_mag, targets.psm, w, true)?;
            Ok((v, g.expect("gradient requested")))
        }
    }
}

pub fn loss_value(
    kind: LossKind,
    mask: &Array2<f64>,
    targets: &LossTargets<'_>,
    w: &LossWeights,
) -> Result<f64> {
    match kind {
        LossKind::Mal => mal(mask, targets.ibm),
        LossKind::Msal => msal(mask, targets.mix_mag, targets.psm),
        LossKind::Mtsal => mtsal(mask, targets.mix_mag, targets.psm, w),
    }
}
