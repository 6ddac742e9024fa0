use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub(crate) fn solve(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let x = a.lu().solve(b).ok_or_else(|| Error::SolverFailure {
        detail: "singular linear system".into(),
    })?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::SolverFailure {
            detail: "non-finite solution".into(),
        })
    }
}

pub(crate) fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    m.clone().svd(false, false).singular_values
}

/// `sqrt(sum_i d_i x_i^2)`.
pub(crate) fn weighted_norm(x: &DVector<f64>, d: &DVector<f64>) -> f64 {
    x.iter()
        .zip(d.iter())
        .map(|(xi, di)| di * xi * xi)
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn max_abs(x: &DVector<f64>) -> f64 {
    x.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

pub(crate) fn matrix_power(m: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let mut out = DMatrix::identity(m.nrows(), m.ncols());
    for _ in 0..n {
        out = &out * m;
    }
    out
}
