use serde::Serialize;

use crate::linalg;
use crate::scalar::Scalar;

/// Joint Gaussian over the query variables together with the log of the mass
/// that the (unnormalized) model puts on them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryMarginal<T> {
    pub variables: Vec<String>,
    pub mean: Vec<T>,
    /// Row-major `k x k`.
    pub covariance: Vec<T>,
    pub log_normalizer: T,
}

impl<T: Scalar> QueryMarginal<T> {
    /// From the canonical form `-1/2 x'Jx + h'x + c`. Returns `None` when `J` is
    /// not positive definite.
    pub fn from_canonical(variables: Vec<String>, j: &[T], h: &[T], c: T) -> Option<Self> {
        let k = variables.len();
        let l = linalg::cholesky(j, k)?;
        let mean = linalg::cholesky_solve(&l, k, h);
        let covariance = linalg::cholesky_inverse(&l, k);
        let quad = h.iter().zip(&mean).fold(T::zero(), |s, (&a, &b)| s + a * b);
        let log_normalizer = c + T::half() * quad + T::count(k as u64) * T::half() * T::ln_2pi()
            - T::half() * linalg::cholesky_log_det(&l, k);
        Some(QueryMarginal { variables, mean, covariance, log_normalizer })
    }

    pub fn dim(&self) -> usize {
        self.variables.len()
    }

    pub fn variance(&self, i: usize) -> T {
        self.covariance[i * self.dim() + i]
    }

    pub fn cov(&self, i: usize, j: usize) -> T {
        self.covariance[i * self.dim() + j]
    }

    /// Largest relative deviation `|a - b| / (1 + |b|)` over mean, covariance
    /// and log-normalizer.
    pub fn max_rel_diff(&self, other: &Self) -> f64 {
        let rel = |a: T, b: T| (a - b).abs().as_f64() / (1.0 + b.abs().as_f64());
        let mut d = rel(self.log_normalizer, other.log_normalizer);
        for (a, b) in self.mean.iter().zip(&other.mean) {
            d = d.max(rel(*a, *b));
        }
        for (a, b) in self.covariance.iter().zip(&other.covariance) {
            d = d.max(rel(*a, *b));
        }
        if self.dim() != other.dim() {
            d = f64::INFINITY;
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional() {
        // -1/2 * 2 x^2 + 2 x  => mean 1, variance 1/2
        let m = QueryMarginal::<f64>::from_canonical(vec!["x".into()], &[2.0], &[2.0], 0.0).unwrap();
        assert!((m.mean[0] - 1.0).abs() < 1e-15);
        assert!((m.variance(0) - 0.5).abs() < 1e-15);
        let z = 1.0 + 0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * 2f64.ln();
        assert!((m.log_normalizer - z).abs() < 1e-14);
        assert!(QueryMarginal::<f64>::from_canonical(vec!["x".into()], &[0.0], &[0.0], 0.0).is_none());
    }
}
