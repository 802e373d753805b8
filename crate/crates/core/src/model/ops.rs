//! Elementwise pieces shared by the forward and backward passes.

use ndarray::{Array1, Array2, ArrayView1, Axis, Zip};

pub(crate) const NORM_EPS: f64 = 1e-6;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// `tanh` through a single `exp`; libm's version dominates MLP time.
fn fast_tanh(u: f64) -> f64 {
    let e = (-2.0 * u.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(u)
}

/// The tanh term of GELU at `x`.
pub(crate) fn gelu_tanh(x: f64) -> f64 {
    fast_tanh(GELU_C * (x + GELU_A * x * x * x))
}

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + gelu_tanh(x))
}

/// Derivative of GELU given `x` and its cached [`gelu_tanh`].
pub(crate) fn gelu_grad(x: f64, th: f64) -> f64 {
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
}

/// Row-wise RMSNorm with gain `[1, d]`. Returns the output and each row's
/// inverse RMS.
pub(crate) fn rms_norm(x: &Array2<f64>, gain: &Array2<f64>) -> (Array2<f64>, Vec<f64>) {
    let d = x.ncols() as f64;
    let mut out = x.clone();
    let mut inv = Vec::with_capacity(x.nrows());
    let g = gain.row(0);
    for mut row in out.rows_mut() {
        let r = 1.0 / (row.dot(&row) / d + NORM_EPS).sqrt();
        inv.push(r);
        Zip::from(&mut row).and(&g).for_each(|v, &g| *v *= r * g);
    }
    (out, inv)
}

pub(crate) fn rms_norm_vec(x: ArrayView1<f64>, gain: &Array2<f64>) -> Array1<f64> {
    let d = x.len() as f64;
    let r = 1.0 / (x.dot(&x) / d + NORM_EPS).sqrt();
    let mut out = x.to_owned();
    Zip::from(&mut out).and(gain.row(0)).for_each(|v, &g| *v *= r * g);
    out
}

/// Backward of [`rms_norm`]; accumulates into `dgain` and returns `dx`.
pub(crate) fn rms_norm_backward(
    dy: &Array2<f64>,
    x: &Array2<f64>,
    inv: &[f64],
    gain: &Array2<f64>,
    dgain: &mut Array2<f64>,
) -> Array2<f64> {
    let d = x.ncols() as f64;
    let g = gain.row(0);
    let mut dx = Array2::zeros(x.raw_dim());
    for (i, ((dy_r, x_r), mut dx_r)) in dy
        .rows()
        .into_iter()
        .zip(x.rows())
        .zip(dx.rows_mut())
        .enumerate()
    {
        let r = inv[i];
        // dgain += dy * x * r
        Zip::from(dgain.row_mut(0))
            .and(&dy_r)
            .and(&x_r)
            .for_each(|dg, &dy, &x| *dg += dy * x * r);
        let gdy = &dy_r * &g;
        let dot = gdy.dot(&x_r);
        let coef = r * r * r * dot / d;
        Zip::from(&mut dx_r)
            .and(&gdy)
            .and(&x_r)
            .for_each(|dx, &gdy, &x| *dx = r * gdy - coef * x);
    }
    dx
}

/// In-place softmax of a slice; entries at -inf become zero.
pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Log-sum-exp of a row.
pub(crate) fn log_sum_exp(v: ArrayView1<f64>) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Sum of the rows of `a`, as `[1, cols]`.
pub(crate) fn row_sum(a: &Array2<f64>) -> Array2<f64> {
    a.sum_axis(Axis(0)).insert_axis(Axis(0))
}

/// Sinusoidal position encoding of `pos`, width `d`.
pub(crate) fn position_encoding(pos: usize, d: usize) -> Array1<f64> {
    Array1::from_shape_fn(d, |i| {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
        if i % 2 == 0 { angle.sin() } else { angle.cos() }
    })
}
