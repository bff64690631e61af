//! Dense row-major kernels used by the decoder. All matrices are flat slices.

/// `out(m x n) += a(m x k) * b(k x n)`
pub(crate) fn matmul_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(out.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for (p, &x) in a[i * k..(i + 1) * k].iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (o, &y) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += x * y;
            }
        }
    }
}

/// `out(m x n) = a(m x k) * b(k x n) + bias(n)`
pub(crate) fn linear(a: &[f64], w: &[f64], bias: Option<&[f64]>, m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = match bias {
        Some(b) => b.repeat(m),
        None => vec![0.0; m * n],
    };
    matmul_acc(&mut out, a, w, m, k, n);
    out
}

/// `out(k x n) += a(m x k)^T * b(m x n)`
pub(crate) fn matmul_at_b_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for (p, &x) in a[i * k..(i + 1) * k].iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (o, &y) in out[p * n..(p + 1) * n].iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
}

/// `out(m x k) += a(m x n) * b(k x n)^T`
pub(crate) fn matmul_a_bt_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, n: usize, k: usize) {
    debug_assert_eq!(out.len(), m * k);
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

pub(crate) fn add_rows(out: &mut [f64], rows: &[f64], n: usize) {
    for row in rows.chunks_exact(n) {
        for (o, &x) in out.iter_mut().zip(row) {
            *o += x;
        }
    }
}

pub(crate) const LN_EPS: f64 = 1e-5;

/// Per-row normalization state kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct LnCache {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub(crate) fn layernorm(x: &[f64], gain: &[f64], bias: &[f64], n: usize) -> (Vec<f64>, LnCache) {
    let rows = x.len() / n;
    let mut out = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * n..(r + 1) * n];
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let s = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = s;
        for c in 0..n {
            let h = (row[c] - mean) * s;
            xhat[r * n + c] = h;
            out[r * n + c] = h * gain[c] + bias[c];
        }
    }
    (out, LnCache { xhat, rstd })
}

/// Accumulates gain/bias gradients and returns the input gradient.
pub(crate) fn layernorm_backward(
    dy: &[f64],
    cache: &LnCache,
    gain: &[f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
    n: usize,
) -> Vec<f64> {
    let rows = dy.len() / n;
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; n];
    for r in 0..rows {
        let dyr = &dy[r * n..(r + 1) * n];
        let xh = &cache.xhat[r * n..(r + 1) * n];
        for c in 0..n {
            dgain[c] += dyr[c] * xh[c];
            dbias[c] += dyr[c];
            dxhat[c] = dyr[c] * gain[c];
        }
        let mean_d = dxhat.iter().sum::<f64>() / n as f64;
        let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n as f64;
        for c in 0..n {
            dx[r * n + c] = cache.rstd[r] * (dxhat[c] - mean_d - xh[c] * mean_dx);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// In-place softmax; returns log-sum-exp.
pub(crate) fn softmax_in_place(xs: &mut [f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
    max + sum.ln()
}

pub(crate) fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    xs.iter().map(|x| x - lse).collect()
}

pub(crate) fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.0, -1.0, 2.0, 0.5, 1.0]; // 3x2
        let mut out = vec![0.0; 4];
        matmul_acc(&mut out, &a, &b, 2, 3, 2);
        assert_eq!(out, vec![1.0 - 2.0 + 1.5, 4.0 + 3.0, 4.0 - 5.0 + 3.0, 10.0 + 6.0]);

        // a^T (3x2) * c (2x2)
        let c = [1.0, 2.0, 3.0, 4.0];
        let mut at = vec![0.0; 6];
        matmul_at_b_acc(&mut at, &a, &c, 2, 3, 2);
        assert_eq!(at, vec![13.0, 18.0, 17.0, 24.0, 21.0, 30.0]);

        // a (2x3) * a^T (3x2)
        let mut aat = vec![0.0; 4];
        matmul_a_bt_acc(&mut aat, &a, &a, 2, 3, 2);
        assert_eq!(aat, vec![14.0, 32.0, 32.0, 77.0]);
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut xs = vec![1000.0, 999.0, -5.0];
        let lse = softmax_in_place(&mut xs);
        assert!((xs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((lse - (1000.0 + (1.0 + (-1.0f64).exp() + (-1005.0f64).exp()).ln())).abs() < 1e-9);
    }
}
