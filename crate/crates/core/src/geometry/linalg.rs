//! Dense helpers for the small real symmetric matrices stored per grid point.
//!
//! Matrices are kept in packed upper-triangular, row-major order:
//! `(0,0), (0,1), .., (0,n-1), (1,1), .., (n-1,n-1)`. The packing makes
//! symmetry exact at the storage level.

use nalgebra::{DMatrix, SymmetricEigen};

pub fn packed_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Offset of entry `(i, j)` in a packed matrix of order `n`.
pub fn packed_index(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * n - i * (i + 1) / 2 + j
}

pub fn identity(n: usize) -> Vec<f64> {
    let mut out = vec![0.0; packed_len(n)];
    for i in 0..n {
        out[packed_index(n, i, i)] = 1.0;
    }
    out
}

pub fn to_dense(n: usize, a: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| a[packed_index(n, i, j)])
}

pub fn from_dense(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = vec![0.0; packed_len(n)];
    for i in 0..n {
        for j in i..n {
            out[packed_index(n, i, j)] = 0.5 * (m[(i, j)] + m[(j, i)]);
        }
    }
    out
}

pub fn det(n: usize, a: &[f64]) -> f64 {
    match n {
        1 => a[0],
        2 => a[0] * a[2] - a[1] * a[1],
        _ => to_dense(n, a).determinant(),
    }
}

pub fn trace(n: usize, a: &[f64]) -> f64 {
    (0..n).map(|i| a[packed_index(n, i, i)]).sum()
}

/// Eigenvalues in ascending order.
pub fn eigenvalues(n: usize, a: &[f64]) -> Vec<f64> {
    match n {
        1 => vec![a[0]],
        2 => {
            let mean = 0.5 * (a[0] + a[2]);
            let half_gap = (0.25 * (a[0] - a[2]).powi(2) + a[1] * a[1]).sqrt();
            vec![mean - half_gap, mean + half_gap]
        }
        _ => {
            let mut ev: Vec<f64> = SymmetricEigen::new(to_dense(n, a)).eigenvalues.iter().copied().collect();
            ev.sort_by(f64::total_cmp);
            ev
        }
    }
}

pub fn min_eigenvalue(n: usize, a: &[f64]) -> f64 {
    match n {
        1 => a[0],
        2 => 0.5 * (a[0] + a[2]) - (0.25 * (a[0] - a[2]).powi(2) + a[1] * a[1]).sqrt(),
        _ => eigenvalues(n, a)[0],
    }
}

pub fn inverse(n: usize, a: &[f64]) -> Option<Vec<f64>> {
    match n {
        1 => (a[0] != 0.0).then(|| vec![1.0 / a[0]]),
        2 => {
            let d = det(2, a);
            (d != 0.0).then(|| vec![a[2] / d, -a[1] / d, a[0] / d])
        }
        _ => to_dense(n, a).try_inverse().map(|m| from_dense(&m)),
    }
}

/// `tr(b^{-1} a)`; `b` must be invertible.
pub fn relative_trace(n: usize, b: &[f64], a: &[f64]) -> f64 {
    match n {
        1 => a[0] / b[0],
        2 => (b[2] * a[0] - 2.0 * b[1] * a[1] + b[0] * a[2]) / det(2, b),
        _ => {
            let bi = inverse(n, b).expect("relative_trace: singular matrix");
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += bi[packed_index(n, i, j)] * a[packed_index(n, j, i)];
                }
            }
            s
        }
    }
}

/// Product `b^{-1} a b^{-1}` (packed), the contravariant tensor
/// obtained by raising both indices of `a` with `b`.
pub fn sandwich_inverse(n: usize, b: &[f64], a: &[f64]) -> Vec<f64> {
    if n == 1 {
        return vec![a[0] / (b[0] * b[0])];
    }
    let bi = to_dense(n, &inverse(n, b).expect("sandwich_inverse: singular matrix"));
    let m = &bi * to_dense(n, a) * &bi;
    from_dense(&m)
}

/// Eigenvalues of `a` relative to the positive definite `b` (roots of
/// `det(a - mu b) = 0`), ascending. Returns `None` if `b` is not positive
/// definite.
pub fn generalized_eigenvalues(n: usize, a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    match n {
        1 => (b[0] > 0.0).then(|| vec![a[0] / b[0]]),
        _ => {
            let chol = to_dense(n, b).cholesky()?;
            let l_inv = chol.l().try_inverse()?;
            let c = &l_inv * to_dense(n, a) * l_inv.transpose();
            let c = 0.5 * (&c + c.transpose());
            let mut ev: Vec<f64> = SymmetricEigen::new(c).eigenvalues.iter().copied().collect();
            ev.sort_by(f64::total_cmp);
            Some(ev)
        }
    }
}

/// Quadratic form `v^T a v`.
pub fn quadratic_form(n: usize, a: &[f64], v: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += v[i] * a[packed_index(n, i, j)] * v[j];
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn packing_roundtrip() {
        let n = 3;
        let a = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let m = to_dense(n, &a);
        assert_eq!(m[(1, 0)], 2.0);
        assert_eq!(m[(2, 1)], 5.0);
        assert_eq!(from_dense(&m), a);
    }

    #[test]
    fn closed_forms_agree_with_dense() {
        let a = vec![2.0, 0.3, 1.5];
        let b = vec![1.2, -0.1, 0.8];
        let ev = eigenvalues(2, &a);
        let dense: Vec<f64> = {
            let mut e: Vec<f64> = SymmetricEigen::new(to_dense(2, &a)).eigenvalues.iter().copied().collect();
            e.sort_by(f64::total_cmp);
            e
        };
        assert_relative_eq!(ev[0], dense[0], epsilon = 1e-14);
        assert_relative_eq!(ev[1], dense[1], epsilon = 1e-14);
        let bi = inverse(2, &b).unwrap();
        let prod = to_dense(2, &b) * to_dense(2, &bi);
        assert_relative_eq!(prod[(0, 0)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(prod[(0, 1)], 0.0, epsilon = 1e-14);
        let g = generalized_eigenvalues(2, &a, &b).unwrap();
        assert_relative_eq!(g.iter().sum::<f64>(), relative_trace(2, &b, &a), epsilon = 1e-12);
    }

    #[test]
    fn not_positive_definite_has_no_generalized_spectrum() {
        assert!(generalized_eigenvalues(2, &[1.0, 0.0, 1.0], &[1.0, 2.0, 1.0]).is_none());
    }
}
