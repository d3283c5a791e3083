//! Regression-based delta and acceleration along the time axis.
//!
//! `delta` at frame t is `Σ_l l·(v(t+l) − v(t−l)) / Σ_l 2l²` for l = 1..=L,
//! with frames beyond either end replaced by the nearest boundary frame.
//! Both operators act on rows of a T×F matrix and are linear, so the loss
//! gradient only needs their transpose, [`delta_adjoint`].

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

pub const DEFAULT_WINDOW: usize = 2;

fn denominator(window: usize) -> f64 {
    (1..=window).map(|l| 2.0 * (l * l) as f64).sum()
}

fn check(m: &ArrayView2<f64>, window: usize) -> Result<()> {
    if m.nrows() == 0 || window == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

pub fn delta(m: &Array2<f64>, window: usize) -> Result<Array2<f64>> {
    delta_view(m.view(), window)
}

pub fn delta_view(m: ArrayView2<f64>, window: usize) -> Result<Array2<f64>> {
    check(&m, window)?;
    let (t_len, f_len) = m.dim();
    let last = t_len as isize - 1;
    let denom = denominator(window);
    let mut out = Array2::zeros((t_len, f_len));
    for t in 0..t_len {
        let mut row = out.row_mut(t);
        for l in 1..=window {
            let fwd = (t as isize + l as isize).min(last) as usize;
            let bwd = (t as isize - l as isize).max(0) as usize;
            let c = l as f64 / denom;
            for ((o, &a), &b) in row.iter_mut().zip(m.row(fwd)).zip(m.row(bwd)) {
                *o += c * (a - b);
            }
        }
    }
    Ok(out)
}

pub fn accel(m: &Array2<f64>, window: usize) -> Result<Array2<f64>> {
    delta(&delta(m, window)?, window)
}

/// Transpose of [`delta`]: `⟨delta(m), g⟩ == ⟨m, delta_adjoint(g)⟩`.
pub fn delta_adjoint(g: &Array2<f64>, window: usize) -> Result<Array2<f64>> {
    check(&g.view(), window)?;
    let (t_len, f_len) = g.dim();
    let last = t_len as isize - 1;
    let denom = denominator(window);
    let mut out = Array2::zeros((t_len, f_len));
    for t in 0..t_len {
        let src = g.row(t);
        for l in 1..=window {
            let fwd = (t as isize + l as isize).min(last) as usize;
            let bwd = (t as isize - l as isize).max(0) as usize;
            let c = l as f64 / denom;
            for (o, &s) in out.row_mut(fwd).iter_mut().zip(src) {
                *o += c * s;
            }
            for (o, &s) in out.row_mut(bwd).iter_mut().zip(src) {
                *o -= c * s;
            }
        }
    }
    Ok(out)
}

/// Transpose of [`accel`].
pub fn accel_adjoint(g: &Array2<f64>, window: usize) -> Result<Array2<f64>> {
    delta_adjoint(&delta_adjoint(g, window)?, window)
}
