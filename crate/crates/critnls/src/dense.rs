//! Thin wrappers over faer for the dense solves and symmetric eigenproblems.

use crate::error::{Error, Result};
use faer::prelude::Solve;
use faer::{Mat, Side};

pub type Dense = Mat<f64>;

pub fn from_rows(n: usize, m: usize, f: impl Fn(usize, usize) -> f64) -> Dense {
    Mat::from_fn(n, m, f)
}

pub struct Lu {
    lu: faer::linalg::solvers::PartialPivLu<f64>,
    n: usize,
}

impl Lu {
    pub fn new(a: &Dense) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Mismatch("LU of a non-square matrix".into()));
        }
        Ok(Self { lu: a.partial_piv_lu(), n: a.nrows() })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let rhs = Mat::from_fn(self.n, 1, |i, _| b[i]);
        let x = self.lu.solve(&rhs);
        let out: Vec<f64> = (0..self.n).map(|i| x[(i, 0)]).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("dense solve produced non-finite values (singular matrix?)".into()));
        }
        Ok(out)
    }
}

pub fn matvec(a: &Dense, x: &[f64]) -> Vec<f64> {
    let xm = Mat::from_fn(x.len(), 1, |i, _| x[i]);
    let y = a * &xm;
    (0..a.nrows()).map(|i| y[(i, 0)]).collect()
}

/// Eigen-decomposition of a symmetric matrix: ascending eigenvalues, eigenvectors as columns.
pub fn sym_eigen(a: &Dense) -> Result<(Vec<f64>, Dense)> {
    let e = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::NoConvergence(format!("symmetric eigensolver: {e:?}")))?;
    let s = e.S();
    let vals: Vec<f64> = (0..a.nrows()).map(|i| s[i]).collect();
    Ok((vals, e.U().to_owned()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lu_and_eigen() {
        let n = 30;
        let a = from_rows(n, n, |i, j| if i == j { 2.0 } else if i.abs_diff(j) == 1 { -1.0 } else { 0.0 });
        let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let b = matvec(&a, &x);
        let y = Lu::new(&a).unwrap().solve(&b).unwrap();
        assert!(x.iter().zip(&y).all(|(p, q)| (p - q).abs() < 1e-10));
        let (vals, _) = sym_eigen(&a).unwrap();
        let want = 2.0 - 2.0 * (std::f64::consts::PI / (n as f64 + 1.0)).cos();
        assert!((vals[0] - want).abs() < 1e-12);
    }
}
