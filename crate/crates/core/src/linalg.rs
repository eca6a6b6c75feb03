//! Cholesky factorization with a diagonal jitter ladder.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Relative jitter steps tried after a plain factorization fails.
const JITTER_LADDER: [f64; 7] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

/// Lower-triangular factor `L` of a symmetric positive definite matrix
/// `A + jitter * I = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    // row-major, only the lower triangle is meaningful
    l: Vec<f64>,
    jitter: f64,
}

impl Cholesky {
    /// Factorizes `a` exactly as given; fails on a nonpositive pivot.
    pub fn new(a: &Matrix<f64>) -> Result<Self> {
        Self::with_jitter(a, 0.0).ok_or(Error::NotPositiveDefinite { max_jitter: 0.0 })
    }

    /// Factorizes `a`, adding `scale * j` to the diagonal for the first `j` of
    /// the ladder `0, 1e-10, ..., 1e-4` that succeeds.
    pub fn with_ladder(a: &Matrix<f64>, scale: f64) -> Result<Self> {
        if let Some(c) = Self::with_jitter(a, 0.0) {
            return Ok(c);
        }
        for step in JITTER_LADDER {
            if let Some(c) = Self::with_jitter(a, step * scale) {
                return Ok(c);
            }
        }
        Err(Error::NotPositiveDefinite {
            max_jitter: JITTER_LADDER[JITTER_LADDER.len() - 1] * scale,
        })
    }

    fn with_jitter(a: &Matrix<f64>, jitter: f64) -> Option<Self> {
        let n = a.rows();
        assert_eq!(n, a.cols(), "Cholesky needs a square matrix");
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let s = a[(i, j)] - dot(&l[i * n..i * n + j], &l[j * n..j * n + j]);
                if i == j {
                    let d = s + jitter;
                    if !(d > 0.0) || !d.is_finite() {
                        return None;
                    }
                    l[i * n + i] = libm::sqrt(d);
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Some(Cholesky { n, l, jitter })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Diagonal jitter that was needed for the factorization to succeed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n)
            .map(|i| libm::log(self.l[i * self.n + i]))
            .sum::<f64>()
    }

    /// Solves `L x = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let mut x = Vec::with_capacity(n);
        for i in 0..n {
            let s = b[i] - dot(&self.l[i * n..i * n + i], &x[..i]);
            x.push(s / self.l[i * n + i]);
        }
        x
    }

    /// Solves `Lᵀ x = b`.
    pub fn solve_upper(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let mut x = b.to_vec();
        for i in (0..n).rev() {
            x[i] /= self.l[i * n + i];
            let xi = x[i];
            for k in 0..i {
                x[k] -= self.l[i * n + k] * xi;
            }
        }
        x
    }

    /// Computes `L z`.
    pub fn mul_lower(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.n);
        let n = self.n;
        (0..n)
            .map(|i| dot(&self.l[i * n..=i * n + i], &z[..=i]))
            .collect()
    }

    /// Solves `(L Lᵀ) x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solve_upper(&self.solve_lower(b))
    }
}

/// Dot product with eight independent accumulators; the fixed association
/// keeps results bit-reproducible across runs.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> Matrix<f64> {
        Matrix::from_fn(n, n, |i, j| {
            let d = (i as f64 - j as f64).abs();
            libm::exp(-d / 3.0) + if i == j { 0.1 } else { 0.0 }
        })
    }

    #[test]
    fn reconstructs_input() {
        let a = spd(9);
        let c = Cholesky::new(&a).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                let v: f64 = (0..9).map(|k| c.l[i * 9 + k] * c.l[j * 9 + k]).sum();
                assert!((v - a[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn solve_round_trips() {
        let a = spd(7);
        let b: Vec<f64> = (0..7).map(|i| (i as f64).sin()).collect();
        let x = Cholesky::new(&a).unwrap().solve(&b);
        for i in 0..7 {
            let r: f64 = (0..7).map(|j| a[(i, j)] * x[j]).sum();
            assert!((r - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn ladder_rescues_duplicate_rows() {
        // rank one: all ones
        let a = Matrix::filled(4, 4, 1.0);
        assert!(Cholesky::new(&a).is_err());
        let c = Cholesky::with_ladder(&a, 1.0).unwrap();
        assert!(c.jitter() > 0.0 && c.jitter() <= 1e-4);
    }

    #[test]
    fn ladder_gives_up_on_indefinite() {
        let a = Matrix::from_vec(2, 2, alloc::vec![1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            Cholesky::with_ladder(&a, 1.0),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }
}
