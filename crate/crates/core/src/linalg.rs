//! Small dense factorizations used by the samplers and their oracles.

use crate::error::{domain, Result};

/// Lower Cholesky factor of a dense symmetric positive definite matrix
/// (row-major, `n x n`). Returns the factor in row-major order.
pub fn cholesky_lower(a: &[f64], n: usize) -> Result<Vec<f64>> {
    if a.len() != n * n {
        return domain("matrix shape mismatch");
    }
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return domain(format!("matrix not positive definite at pivot {i}"));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Lower Cholesky factor of the symmetric Toeplitz matrix with first column
/// `t`, by the Schur generator recursion in `O(n^2)`. Row-major `n x n`.
pub fn toeplitz_cholesky_lower(t: &[f64]) -> Result<Vec<f64>> {
    let n = t.len();
    if n == 0 || t[0] <= 0.0 {
        return domain("Toeplitz matrix needs a positive diagonal");
    }
    let s = t[0].sqrt();
    let mut u: Vec<f64> = t.iter().map(|x| x / s).collect();
    let mut v = u.clone();
    v[0] = 0.0;
    let mut l = vec![0.0; n * n];
    for k in 0..n {
        for i in k..n {
            l[i * n + k] = u[i];
        }
        if k + 1 == n {
            break;
        }
        for i in (k + 1..n).rev() {
            u[i] = u[i - 1];
        }
        u[k] = 0.0;
        let rho = v[k + 1] / u[k + 1];
        if !(rho.abs() < 1.0) {
            return domain(format!("Toeplitz matrix not positive definite at step {k}"));
        }
        let c = (1.0 - rho * rho).sqrt();
        for i in k + 1..n {
            let (ui, vi) = (u[i], v[i]);
            u[i] = (ui - rho * vi) / c;
            v[i] = (vi - rho * ui) / c;
        }
    }
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn dense_cholesky_reconstructs() {
        let a = [4.0, 2.0, 0.4, 2.0, 5.0, 1.0, 0.4, 1.0, 3.0];
        let l = cholesky_lower(&a, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| l[i * 3 + k] * l[j * 3 + k]).sum();
                assert_relative_eq!(v, a[i * 3 + j], epsilon = 1e-12);
            }
        }
        assert!(cholesky_lower(&[1.0, 2.0, 2.0, 1.0], 2).is_err());
    }

    #[test]
    fn schur_matches_dense_cholesky() {
        let n: usize = 40;
        let t: Vec<f64> = (0..n).map(|k| 1.0 / (1.0 + k as f64).powf(0.7)).collect();
        let dense: Vec<f64> = (0..n * n).map(|ij| t[(ij / n).abs_diff(ij % n)]).collect();
        let a = cholesky_lower(&dense, n).unwrap();
        let b = toeplitz_cholesky_lower(&t).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(x, y, epsilon = 1e-11);
        }
    }
}
