//! Row-level numeric kernels.
//!
//! The tape ops and the incremental rollout engine both go through these
//! functions, so a row computed either way is bit-identical.

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `out[j] += sum_k x[k] * w[k * n + j]`, accumulating over `k` in order.
#[inline]
pub fn vec_mat_acc(x: &[f64], w: &[f64], n: usize, out: &mut [f64]) {
    debug_assert_eq!(w.len(), x.len() * n);
    debug_assert_eq!(out.len(), n);
    for (k, &xk) in x.iter().enumerate() {
        if xk == 0.0 {
            continue;
        }
        let wrow = &w[k * n..(k + 1) * n];
        for (o, &wv) in out.iter_mut().zip(wrow) {
            *o += xk * wv;
        }
    }
}

/// `out = x * W + b` for a single row.
#[inline]
pub fn affine_row(x: &[f64], w: &[f64], b: Option<&[f64]>, out: &mut [f64]) {
    match b {
        Some(b) => out.copy_from_slice(b),
        None => out.iter_mut().for_each(|o| *o = 0.0),
    }
    vec_mat_acc(x, w, out.len(), out);
}

/// `out[k] += sum_j dy[j] * w[k * n + j]`, i.e. `dy * W^T`.
#[inline]
pub fn vec_mat_t_acc(dy: &[f64], w: &[f64], out: &mut [f64]) {
    let n = dy.len();
    for (k, o) in out.iter_mut().enumerate() {
        let wrow = &w[k * n..(k + 1) * n];
        let mut acc = 0.0;
        for (&d, &wv) in dy.iter().zip(wrow) {
            acc += d * wv;
        }
        *o += acc;
    }
}

/// Rank-one update `W[k, j] += x[k] * dy[j]`.
#[inline]
pub fn outer_acc(x: &[f64], dy: &[f64], w: &mut [f64]) {
    let n = dy.len();
    for (k, &xk) in x.iter().enumerate() {
        if xk == 0.0 {
            continue;
        }
        let wrow = &mut w[k * n..(k + 1) * n];
        for (g, &d) in wrow.iter_mut().zip(dy) {
            *g += xk * d;
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Returns `(mean, rstd)` of the row.
pub fn layer_norm_row(x: &[f64], gamma: &[f64], beta: &[f64], out: &mut [f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    for i in 0..x.len() {
        out[i] = (x[i] - mean) * rstd * gamma[i] + beta[i];
    }
    (mean, rstd)
}

pub fn log_softmax_row(x: &[f64], out: &mut [f64]) {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    for (o, v) in out.iter_mut().zip(x) {
        *o = v - lse;
    }
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    log_softmax_row(x, &mut out);
    out.iter_mut().for_each(|v| *v = v.exp());
    out
}

/// Single-query causal attention for one head.
///
/// `qkv` holds packed rows `[q | k | v]` of width `3 * d` each. The query is
/// row `query`; keys and values are rows `first..=query`. Writes the softmax
/// weights into `probs` (length `query - first + 1`) and the weighted sum of
/// values into `out` (length `dh`).
#[allow(clippy::too_many_arguments)]
pub fn attend_row(
    qkv: &[f64],
    d: usize,
    first: usize,
    query: usize,
    head: usize,
    dh: usize,
    probs: &mut [f64],
    out: &mut [f64],
) {
    let stride = 3 * d;
    let scale = 1.0 / (dh as f64).sqrt();
    let qo = query * stride + head * dh;
    let q = &qkv[qo..qo + dh];
    let mut max = f64::NEG_INFINITY;
    for (slot, j) in (first..=query).enumerate() {
        let ko = j * stride + d + head * dh;
        let k = &qkv[ko..ko + dh];
        let mut s = 0.0;
        for (a, b) in q.iter().zip(k) {
            s += a * b;
        }
        s *= scale;
        probs[slot] = s;
        if s > max {
            max = s;
        }
    }
    let mut z = 0.0;
    for p in probs.iter_mut() {
        *p = (*p - max).exp();
        z += *p;
    }
    for p in probs.iter_mut() {
        *p /= z;
    }
    out.iter_mut().for_each(|o| *o = 0.0);
    for (slot, j) in (first..=query).enumerate() {
        let vo = j * stride + 2 * d + head * dh;
        let v = &qkv[vo..vo + dh];
        let p = probs[slot];
        for (o, &vv) in out.iter_mut().zip(v) {
            *o += p * vv;
        }
    }
}

/// Activations saved by a GRU cell for its backward pass.
#[derive(Debug, Clone, Default)]
pub struct GruCache {
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    pub n: Vec<f64>,
    pub gh_n: Vec<f64>,
}

/// One GRU update with gate order `(reset, update, candidate)`:
///
/// ```text
/// r  = sigmoid(Wxr x + bxr + Whr h + bhr)
/// z  = sigmoid(Wxz x + bxz + Whz h + bhz)
/// n  = tanh(Wxn x + bxn + r * (Whn h + bhn))
/// h' = (1 - z) * n + z * h
/// ```
#[allow(clippy::too_many_arguments)]
pub fn gru_cell(
    x: &[f64],
    h: &[f64],
    w_x: &[f64],
    w_h: &[f64],
    b_x: &[f64],
    b_h: &[f64],
    out: &mut [f64],
    cache: Option<&mut GruCache>,
) {
    let d = h.len();
    let mut gx = vec![0.0; 3 * d];
    let mut gh = vec![0.0; 3 * d];
    affine_row(x, w_x, Some(b_x), &mut gx);
    affine_row(h, w_h, Some(b_h), &mut gh);
    let mut r = vec![0.0; d];
    let mut z = vec![0.0; d];
    let mut n = vec![0.0; d];
    for i in 0..d {
        r[i] = sigmoid(gx[i] + gh[i]);
        z[i] = sigmoid(gx[d + i] + gh[d + i]);
        n[i] = (gx[2 * d + i] + r[i] * gh[2 * d + i]).tanh();
        out[i] = (1.0 - z[i]) * n[i] + z[i] * h[i];
    }
    if let Some(c) = cache {
        c.gh_n = gh[2 * d..].to_vec();
        c.r = r;
        c.z = z;
        c.n = n;
    }
}

/// Backward of [`gru_cell`]. Accumulates into every gradient buffer.
#[allow(clippy::too_many_arguments)]
pub fn gru_cell_backward(
    x: &[f64],
    h: &[f64],
    w_x: &[f64],
    w_h: &[f64],
    cache: &GruCache,
    dout: &[f64],
    dx: &mut [f64],
    dh: &mut [f64],
    dw_x: &mut [f64],
    dw_h: &mut [f64],
    db_x: &mut [f64],
    db_h: &mut [f64],
) {
    let d = h.len();
    let mut dgx = vec![0.0; 3 * d];
    let mut dgh = vec![0.0; 3 * d];
    for i in 0..d {
        let (r, z, n) = (cache.r[i], cache.z[i], cache.n[i]);
        let g = dout[i];
        dh[i] += g * z;
        let dn = g * (1.0 - z);
        let dz = g * (h[i] - n);
        let dan = dn * (1.0 - n * n);
        let dr = dan * cache.gh_n[i];
        let dar = dr * r * (1.0 - r);
        let daz = dz * z * (1.0 - z);
        dgx[i] = dar;
        dgh[i] = dar;
        dgx[d + i] = daz;
        dgh[d + i] = daz;
        dgx[2 * d + i] = dan;
        dgh[2 * d + i] = dan * r;
    }
    vec_mat_t_acc(&dgx, w_x, dx);
    vec_mat_t_acc(&dgh, w_h, dh);
    outer_acc(x, &dgx, dw_x);
    outer_acc(h, &dgh, dw_h);
    for i in 0..3 * d {
        db_x[i] += dgx[i];
        db_h[i] += dgh[i];
    }
}

/// Fixed sinusoidal positional encoding for position `pos`.
pub fn sinusoid(pos: usize, d: usize, out: &mut [f64]) {
    for i in 0..d {
        let pair = (i / 2) as f64;
        let freq = 1.0 / 10000f64.powf(2.0 * pair / d as f64);
        let angle = pos as f64 * freq;
        out[i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn log_softmax_normalizes() {
        let mut out = [0.0; 3];
        log_softmax_row(&[1.0, 2.0, 1000.0], &mut out);
        let total: f64 = out.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_gru_halves_hidden_state() {
        let d = 3;
        let h = [0.4, -1.0, 2.0];
        let mut out = [0.0; 3];
        gru_cell(
            &[1.0, 2.0],
            &h,
            &vec![0.0; 2 * 3 * d],
            &vec![0.0; d * 3 * d],
            &vec![0.0; 3 * d],
            &vec![0.0; 3 * d],
            &mut out,
            None,
        );
        for i in 0..d {
            assert_eq!(out[i], 0.5 * h[i]);
        }
    }
}
