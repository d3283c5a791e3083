//! Bidirectional LSTM forward pass and backpropagation through time.
//!
//! Gate pre-activations are packed as `[i | f | g | o]` blocks of width H:
//! `z_t = x_t·Wx + h_{t−1}·Wh + b`, `c_t = σ(f)·c_{t−1} + σ(i)·tanh(g)`,
//! `h_t = σ(o)·tanh(c_t)`. The input projection for all frames is one matrix
//! product; only the recurrent term is evaluated step by step.

use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};

use super::params::{Gradients, Init, Layout, TensorId};

#[derive(Debug, Clone, Copy)]
pub(crate) struct LstmIds {
    pub wx: TensorId,
    pub wh: TensorId,
    pub b: TensorId,
    pub hidden: usize,
}

impl LstmIds {
    pub fn register(layout: &mut Layout, prefix: &str, input: usize, hidden: usize) -> Self {
        let wx = layout.weight(format!("{prefix}.wx"), input, 4 * hidden);
        let wh = layout.weight(format!("{prefix}.wh"), hidden, 4 * hidden);
        // forget-gate bias starts at 1
        let b = layout.add(
            format!("{prefix}.b"),
            &[4 * hidden],
            Init::Constant { value: 1.0, start: hidden, len: hidden },
        );
        Self { wx, wh, b, hidden }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BlstmIds {
    pub fwd: LstmIds,
    pub bwd: LstmIds,
}

impl BlstmIds {
    pub fn register(layout: &mut Layout, prefix: &str, input: usize, hidden: usize) -> Self {
        Self {
            fwd: LstmIds::register(layout, &format!("{prefix}.fwd"), input, hidden),
            bwd: LstmIds::register(layout, &format!("{prefix}.bwd"), input, hidden),
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations of one direction, indexed by frame (not by step).
#[derive(Debug, Clone)]
pub(crate) struct LstmCache {
    /// Post-activation gates `[σ(i) | σ(f) | tanh(g) | σ(o)]`, T×4H.
    gates: Array2<f64>,
    c: Array2<f64>,
    tanh_c: Array2<f64>,
    pub h: Array2<f64>,
    reverse: bool,
}

fn steps(t_len: usize, reverse: bool) -> Box<dyn Iterator<Item = usize>> {
    if reverse {
        Box::new((0..t_len).rev())
    } else {
        Box::new(0..t_len)
    }
}

pub(crate) fn lstm_forward(
    x: ArrayView2<f64>,
    wx: ArrayView2<f64>,
    wh: ArrayView2<f64>,
    b: ArrayView1<f64>,
    reverse: bool,
) -> LstmCache {
    let t_len = x.nrows();
    let hid = wh.nrows();
    let mut gates = x.dot(&wx);
    gates += &b;
    let mut c = Array2::<f64>::zeros((t_len, hid));
    let mut tanh_c = Array2::<f64>::zeros((t_len, hid));
    let mut h = Array2::<f64>::zeros((t_len, hid));
    let wh = wh.as_standard_layout();
    let wh = wh.as_slice().expect("standard layout");

    let mut h_prev = vec![0.0; hid];
    let mut c_prev = vec![0.0; hid];
    for t in steps(t_len, reverse) {
        let mut row = gates.row_mut(t);
        let z = row.as_slice_mut().expect("row-major");
        for (k, &hk) in h_prev.iter().enumerate() {
            if hk != 0.0 {
                let w = &wh[k * 4 * hid..(k + 1) * 4 * hid];
                for (zj, wj) in z.iter_mut().zip(w) {
                    *zj += hk * wj;
                }
            }
        }
        let (zi, rest) = z.split_at_mut(hid);
        let (zf, rest) = rest.split_at_mut(hid);
        let (zg, zo) = rest.split_at_mut(hid);
        let mut c_row = c.row_mut(t);
        let mut tc_row = tanh_c.row_mut(t);
        let mut h_row = h.row_mut(t);
        for j in 0..hid {
            let i = sigmoid(zi[j]);
            let f = sigmoid(zf[j]);
            let g = zg[j].tanh();
            let o = sigmoid(zo[j]);
            zi[j] = i;
            zf[j] = f;
            zg[j] = g;
            zo[j] = o;
            let cj = f * c_prev[j] + i * g;
            let tc = cj.tanh();
            c_row[j] = cj;
            tc_row[j] = tc;
            h_row[j] = o * tc;
            c_prev[j] = cj;
            h_prev[j] = o * tc;
        }
    }
    LstmCache {
        gates,
        c,
        tanh_c,
        h,
        reverse,
    }
}

/// Backpropagate `dh` (T×H) through one direction. Accumulates parameter
/// gradients into `grads` and returns the gradient wrt the input `x`.
pub(crate) fn lstm_backward(
    cache: &LstmCache,
    x: ArrayView2<f64>,
    layout: &Layout,
    params: &[f64],
    ids: &LstmIds,
    dh: ArrayView2<f64>,
    grads: &mut Gradients,
) -> Array2<f64> {
    let t_len = x.nrows();
    let hid = ids.hidden;
    let wx = layout.view2(params, ids.wx);
    let wh = layout.view2(params, ids.wh);
    let wh_s = wh.as_slice().expect("standard layout");

    let mut dz = Array2::<f64>::zeros((t_len, 4 * hid));
    // h_{t−1} for each frame in processing order; zero at the first step
    let mut h_prev_rows = Array2::<f64>::zeros((t_len, hid));
    let mut dh_rec = vec![0.0; hid];
    let mut dc_rec = vec![0.0; hid];

    let order: Vec<usize> = steps(t_len, cache.reverse).collect();
    for (pos, &t) in order.iter().enumerate().rev() {
        let prev = if pos > 0 { Some(order[pos - 1]) } else { None };
        let gates = cache.gates.row(t);
        let g = gates.as_slice().expect("row-major");
        let (gi, gf, gg, go) = (&g[..hid], &g[hid..2 * hid], &g[2 * hid..3 * hid], &g[3 * hid..]);
        let tc = cache.tanh_c.row(t);
        let dh_t = dh.row(t);
        let mut dz_row = dz.row_mut(t);
        let dzs = dz_row.as_slice_mut().expect("row-major");
        for j in 0..hid {
            let c_prev = prev.map_or(0.0, |p| cache.c[[p, j]]);
            let d_h = dh_t[j] + dh_rec[j];
            let d_o = d_h * tc[j];
            let d_c = dc_rec[j] + d_h * go[j] * (1.0 - tc[j] * tc[j]);
            let d_i = d_c * gg[j];
            let d_g = d_c * gi[j];
            let d_f = d_c * c_prev;
            dc_rec[j] = d_c * gf[j];
            dzs[j] = d_i * gi[j] * (1.0 - gi[j]);
            dzs[hid + j] = d_f * gf[j] * (1.0 - gf[j]);
            dzs[2 * hid + j] = d_g * (1.0 - gg[j] * gg[j]);
            dzs[3 * hid + j] = d_o * go[j] * (1.0 - go[j]);
        }
        // dh_{t−1} = dz_t · Whᵀ
        for (k, d) in dh_rec.iter_mut().enumerate() {
            let w = &wh_s[k * 4 * hid..(k + 1) * 4 * hid];
            *d = w.iter().zip(dzs.iter()).map(|(a, b)| a * b).sum();
        }
        if let Some(p) = prev {
            h_prev_rows.row_mut(t).assign(&cache.h.row(p));
        }
    }

    let mut dwx = layout.view2_mut(&mut grads.values, ids.wx);
    dwx += &x.t().dot(&dz);
    let mut dwh = layout.view2_mut(&mut grads.values, ids.wh);
    dwh += &h_prev_rows.t().dot(&dz);
    let mut db = layout.view1_mut(&mut grads.values, ids.b);
    db += &dz.sum_axis(Axis(0));
    dz.dot(&wx.t())
}

#[derive(Debug, Clone)]
pub(crate) struct BlstmCache {
    fwd: LstmCache,
    bwd: LstmCache,
    /// `[h_fwd | h_bwd]`, T×2H.
    pub out: Array2<f64>,
}

pub(crate) fn blstm_forward(
    x: ArrayView2<f64>,
    layout: &Layout,
    params: &[f64],
    ids: &BlstmIds,
) -> BlstmCache {
    let run = |d: &LstmIds, reverse| {
        lstm_forward(
            x,
            layout.view2(params, d.wx),
            layout.view2(params, d.wh),
            layout.view1(params, d.b),
            reverse,
        )
    };
    let fwd = run(&ids.fwd, false);
    let bwd = run(&ids.bwd, true);
    let out = ndarray::concatenate(Axis(1), &[fwd.h.view(), bwd.h.view()])
        .expect("equal frame counts");
    BlstmCache { fwd, bwd, out }
}

pub(crate) fn blstm_backward(
    cache: &BlstmCache,
    x: ArrayView2<f64>,
    layout: &Layout,
    params: &[f64],
    ids: &BlstmIds,
    d_out: ArrayView2<f64>,
    grads: &mut Gradients,
) -> Array2<f64> {
    let hid = ids.fwd.hidden;
    let dx_f = lstm_backward(
        &cache.fwd,
        x,
        layout,
        params,
        &ids.fwd,
        d_out.slice(s![.., ..hid]),
        grads,
    );
    let dx_b = lstm_backward(
        &cache.bwd,
        x,
        layout,
        params,
        &ids.bwd,
        d_out.slice(s![.., hid..]),
        grads,
    );
    dx_f + dx_b
}

/// Parameter count of one LSTM direction with a single bias vector.
pub fn lstm_param_count(input: usize, hidden: usize) -> usize {
    4 * hidden * (input + hidden) + 4 * hidden
}

