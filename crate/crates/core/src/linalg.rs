//! Finite-difference curvature and the matrix algebra behind standard errors.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Central-difference step for coordinate value `x`.
pub fn fd_step(x: f64) -> f64 {
    1e-4_f64.max(1e-4 * x.abs())
}

/// Central-difference Hessian of `f` at `x` with per-coordinate steps.
pub fn hessian<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], steps: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    let mut p = x.to_vec();
    let f0 = f(x);
    for i in 0..n {
        let hi = steps[i];
        p[i] = x[i] + hi;
        let fp = f(&p);
        p[i] = x[i] - hi;
        let fm = f(&p);
        p[i] = x[i];
        h[(i, i)] = (fp - 2.0 * f0 + fm) / (hi * hi);
        for j in 0..i {
            let hj = steps[j];
            let mut corner = |si: f64, sj: f64, p: &mut Vec<f64>| {
                p[i] = x[i] + si * hi;
                p[j] = x[j] + sj * hj;
                let v = f(p);
                p[i] = x[i];
                p[j] = x[j];
                v
            };
            let v = (corner(1.0, 1.0, &mut p) - corner(1.0, -1.0, &mut p)
                - corner(-1.0, 1.0, &mut p)
                + corner(-1.0, -1.0, &mut p))
                / (4.0 * hi * hj);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    h
}

/// Central-difference gradient of `f` at `x`.
pub fn gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], steps: &[f64]) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + steps[i];
            let fp = f(&p);
            p[i] = x[i] - steps[i];
            let fm = f(&p);
            p[i] = x[i];
            (fp - fm) / (2.0 * steps[i])
        })
        .collect()
}

/// Inverse of a symmetric positive-definite matrix, or the eigenvalues that
/// show it is not positive definite.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let mut eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let max = eigenvalues.iter().copied().fold(0.0, f64::max);
    if eigenvalues
        .iter()
        .any(|&l| !(l > 0.0) || l <= max * 1e-14)
    {
        eigenvalues.sort_by(f64::total_cmp);
        return Err(Error::SingularInformation { eigenvalues });
    }
    let inv_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l));
    let q = &eig.eigenvectors;
    Ok(q * inv_diag * q.transpose())
}
