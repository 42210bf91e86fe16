//! Row-major dense kernels used by the forward and backward passes.

/// `out = a · b` for `a: n×k`, `b: k×m`.
pub fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * m);
    out[..n * m].fill(0.0);
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *o += aip * bv;
            }
        }
    }
}

/// `out = a · b + bias` (bias broadcast over rows).
pub fn affine(a: &[f64], w: &[f64], bias: &[f64], n: usize, k: usize, m: usize, out: &mut [f64]) {
    matmul(a, w, n, k, m, out);
    for row in out[..n * m].chunks_exact_mut(m) {
        for (o, &b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

/// `out += aᵀ · d` for `a: n×k`, `d: n×m`, `out: k×m`.
pub fn acc_at_b(a: &[f64], d: &[f64], n: usize, k: usize, m: usize, out: &mut [f64]) {
    for i in 0..n {
        let drow = &d[i * m..(i + 1) * m];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            for (o, &dv) in out[p * m..(p + 1) * m].iter_mut().zip(drow) {
                *o += aip * dv;
            }
        }
    }
}

/// `out += d · wᵀ` for `d: n×m`, `w: k×m`, `out: n×k`.
pub fn acc_a_bt(d: &[f64], w: &[f64], n: usize, k: usize, m: usize, out: &mut [f64]) {
    for i in 0..n {
        let drow = &d[i * m..(i + 1) * m];
        for p in 0..k {
            out[i * k + p] += dot(drow, &w[p * m..(p + 1) * m]);
        }
    }
}

/// `out += column sums of d` for `d: n×m`.
pub fn acc_colsum(d: &[f64], m: usize, out: &mut [f64]) {
    for row in d.chunks_exact(m) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// In-place numerically stable softmax of one row.
pub fn softmax_row(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub const LN_EPS: f64 = 1e-5;

/// Layer norm over rows of width `m`. Stores normalized values and the inverse std per row.
pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], m: usize, out: &mut [f64], xhat: &mut [f64], inv_std: &mut [f64]) {
    for (r, row) in x.chunks_exact(m).enumerate() {
        let mean = row.iter().sum::<f64>() / m as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std[r] = is;
        for c in 0..m {
            let h = (row[c] - mean) * is;
            xhat[r * m + c] = h;
            out[r * m + c] = h * gain[c] + bias[c];
        }
    }
}

/// Backward of [`layer_norm`]; writes `dx` and accumulates gain/bias gradients.
#[allow(clippy::too_many_arguments)]
pub fn layer_norm_backward(
    dy: &[f64],
    xhat: &[f64],
    inv_std: &[f64],
    gain: &[f64],
    m: usize,
    dx: &mut [f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
) {
    let mut dxhat = vec![0.0; m];
    for (r, dyr) in dy.chunks_exact(m).enumerate() {
        let xh = &xhat[r * m..(r + 1) * m];
        let mut mean_d = 0.0;
        let mut mean_dx = 0.0;
        for c in 0..m {
            dgain[c] += dyr[c] * xh[c];
            dbias[c] += dyr[c];
            dxhat[c] = dyr[c] * gain[c];
            mean_d += dxhat[c];
            mean_dx += dxhat[c] * xh[c];
        }
        mean_d /= m as f64;
        mean_dx /= m as f64;
        for c in 0..m {
            dx[r * m + c] = inv_std[r] * (dxhat[c] - mean_d - xh[c] * mean_dx);
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh approximation of GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
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
