//! Dense symmetric positive-definite solves.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Array2<f64>,
}

impl Cholesky {
    /// Factorizes `a = L Lᵀ`. Fails when a pivot is not safely positive,
    /// relative to the largest diagonal entry.
    pub fn factor(a: ArrayView2<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Shape(format!("cholesky of {}x{} matrix", n, a.ncols())));
        }
        let scale = a.diag().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let tol = scale * n as f64 * f64::EPSILON * 16.0;
        let mut l = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            let mut d = a[[j, j]];
            for k in 0..j {
                d -= l[[j, k]] * l[[j, k]];
            }
            if !(d > tol) {
                return Err(Error::Singular(format!(
                    "pivot {j} is {d:.3e}; the system is not positive definite"
                )));
            }
            let d = d.sqrt();
            l[[j, j]] = d;
            for i in (j + 1)..n {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / d;
            }
        }
        Ok(Cholesky { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Solves `A X = B` for every column of `b`.
    pub fn solve(&self, b: ArrayView2<f64>) -> Result<Array2<f64>> {
        let n = self.dim();
        if b.nrows() != n {
            return Err(Error::Shape(format!("rhs has {} rows, expected {n}", b.nrows())));
        }
        let mut x = b.to_owned();
        for c in 0..x.ncols() {
            // forward: L y = b
            for i in 0..n {
                let mut s = x[[i, c]];
                for k in 0..i {
                    s -= self.l[[i, k]] * x[[k, c]];
                }
                x[[i, c]] = s / self.l[[i, i]];
            }
            // backward: Lᵀ x = y
            for i in (0..n).rev() {
                let mut s = x[[i, c]];
                for k in (i + 1)..n {
                    s -= self.l[[k, i]] * x[[k, c]];
                }
                x[[i, c]] = s / self.l[[i, i]];
            }
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn solves_small_spd_system() {
        let a = array![[4.0, 2.0], [2.0, 3.0]];
        let b = array![[2.0], [1.0]];
        let x = Cholesky::factor(a.view()).unwrap().solve(b.view()).unwrap();
        let back = a.dot(&x);
        assert!((back[[0, 0]] - 2.0).abs() < 1e-12);
        assert!((back[[1, 0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_singular() {
        let a = array![[1.0, 1.0], [1.0, 1.0]];
        assert!(matches!(Cholesky::factor(a.view()), Err(Error::Singular(_))));
    }
}
