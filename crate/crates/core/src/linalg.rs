//! Small dense symmetric helpers used for the final query block.

use crate::form::PIVOT_EPS;
use crate::scalar::Scalar;

/// Lower Cholesky factor of a row-major `n x n` matrix, or `None` when a pivot
/// falls below `PIVOT_EPS * max(1, |a_ii|)`.
pub fn cholesky<T: Scalar>(a: &[T], n: usize) -> Option<Vec<T>> {
    assert_eq!(a.len(), n * n);
    let mut l = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s = s - l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > T::of(PIVOT_EPS) * a[i * n + i].abs().max(T::one())) {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

pub fn is_positive_definite<T: Scalar>(a: &[T], n: usize) -> bool {
    cholesky(a, n).is_some()
}

/// Solves `L L' x = b` given the lower factor.
pub fn cholesky_solve<T: Scalar>(l: &[T], n: usize, b: &[T]) -> Vec<T> {
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] = y[i] - l[i * n + k] * y[k];
        }
        y[i] = y[i] / l[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] = y[i] - l[k * n + i] * y[k];
        }
        y[i] = y[i] / l[i * n + i];
    }
    y
}

pub fn cholesky_log_det<T: Scalar>(l: &[T], n: usize) -> T {
    (0..n).fold(T::zero(), |s, i| s + T::two() * l[i * n + i].ln())
}

pub fn cholesky_inverse<T: Scalar>(l: &[T], n: usize) -> Vec<T> {
    let mut inv = vec![T::zero(); n * n];
    let mut e = vec![T::zero(); n];
    for c in 0..n {
        e.iter_mut().for_each(|x| *x = T::zero());
        e[c] = T::one();
        let col = cholesky_solve(l, n, &e);
        for r in 0..n {
            inv[r * n + c] = col[r];
        }
    }
    // exact symmetry
    for r in 0..n {
        for c in r + 1..n {
            let v = (inv[r * n + c] + inv[c * n + r]) * T::half();
            inv[r * n + c] = v;
            inv[c * n + r] = v;
        }
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two() {
        let a: [f64; 4] = [2.0, -1.0, -1.0, 2.0];
        let l = cholesky(&a, 2).unwrap();
        let inv = cholesky_inverse(&l, 2);
        let expect = [2.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0];
        for (x, y) in inv.iter().zip(expect) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!((cholesky_log_det(&l, 2) - 3f64.ln()).abs() < 1e-15);
        let x = cholesky_solve(&l, 2, &[1.0, 0.0]);
        assert!((x[0] - 2.0 / 3.0).abs() < 1e-15 && (x[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn indefinite_rejected() {
        assert!(!is_positive_definite(&[1.0, -1.0, -1.0, 1.0], 2));
        assert!(!is_positive_definite(&[-1.0f32], 1));
        assert!(is_positive_definite::<f64>(&[], 0));
    }
}
