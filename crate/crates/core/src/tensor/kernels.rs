//! Raw slice kernels shared by the tape's forward and backward passes.

use crate::error::{dim_err, Result};

/// `out[m×p] += a[m×n] · b[n×p]`
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, p: usize) {
    for i in 0..m {
        let row = &a[i * n..(i + 1) * n];
        let out_row = &mut out[i * p..(i + 1) * p];
        for (k, &av) in row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[k * p..(k + 1) * p];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×n] += g[m×p] · b[n×p]ᵀ`
pub(crate) fn matmul_bt_acc(g: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, p: usize) {
    for i in 0..m {
        let g_row = &g[i * p..(i + 1) * p];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (k, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[k * p..(k + 1) * p];
            *o += g_row.iter().zip(b_row).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[n×p] += a[m×n]ᵀ · g[m×p]`
pub(crate) fn matmul_at_acc(a: &[f64], g: &[f64], out: &mut [f64], m: usize, n: usize, p: usize) {
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        let g_row = &g[i * p..(i + 1) * p];
        for (k, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[k * p..(k + 1) * p];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += av * gv;
            }
        }
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax_slice(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return dim_err("softmax of an empty vector");
    }
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    Ok(out)
}

/// Numerically stable log-softmax.
pub fn log_softmax_slice(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return dim_err("log-softmax of an empty vector");
    }
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok(x.iter().map(|v| v - lse).collect())
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
