//! Small dense linear algebra on row-major `f64` buffers.

use alloc::vec::Vec;

/// Lower Cholesky factor of a symmetric `n×n` matrix, or `None` when a pivot
/// is not clearly positive (relative to the largest diagonal entry).
pub(crate) fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    let max_diag = (0..n).map(|i| a[i * n + i]).fold(0.0f64, f64::max);
    if !(max_diag > 0.0) || !max_diag.is_finite() {
        return None;
    }
    let tol = 1e-12 * max_diag;
    let mut l = alloc::vec![0.0f64; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > tol) {
            return None;
        }
        let djj = libm::sqrt(d);
        l[j * n + j] = djj;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / djj;
        }
    }
    Some(l)
}

/// Solves `L Lᵀ x = b` in place for each of the `m` columns of `b` (`n×m`).
pub(crate) fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64], m: usize) {
    for col in 0..m {
        for i in 0..n {
            let mut s = b[i * m + col];
            for k in 0..i {
                s -= l[i * n + k] * b[k * m + col];
            }
            b[i * m + col] = s / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = b[i * m + col];
            for k in i + 1..n {
                s -= l[k * n + i] * b[k * m + col];
            }
            b[i * m + col] = s / l[i * n + i];
        }
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// Numerically stable softmax.
pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| libm::exp(z - max)).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
