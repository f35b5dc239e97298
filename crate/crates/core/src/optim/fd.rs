//! Central finite differences and symmetric positive-definite repair.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

fn step(h: f64, x: f64) -> f64 {
    h * x.abs().max(1.0)
}

/// Central-difference gradient with per-coordinate step `h * max(|x_i|, 1)`.
pub fn gradient<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let hi = step(h, x[i]);
            xp[i] = x[i] + hi;
            let fp = f(&xp);
            xp[i] = x[i] - hi;
            let fm = f(&xp);
            xp[i] = x[i];
            (fp - fm) / (2.0 * hi)
        })
        .collect()
}

/// Central-difference Hessian, symmetrized. `fx` is `f(x)`.
pub fn hessian<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], fx: f64, h: f64) -> DMatrix<f64> {
    let n = x.len();
    let hs: Vec<f64> = x.iter().map(|xi| step(h, *xi)).collect();
    let mut m = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    for i in 0..n {
        xp[i] = x[i] + hs[i];
        let fp = f(&xp);
        xp[i] = x[i] - hs[i];
        let fm = f(&xp);
        xp[i] = x[i];
        m[(i, i)] = (fp - 2.0 * fx + fm) / (hs[i] * hs[i]);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let mut eval = |si: f64, sj: f64| {
                xp[i] = x[i] + si * hs[i];
                xp[j] = x[j] + sj * hs[j];
                let v = f(&xp);
                xp[i] = x[i];
                xp[j] = x[j];
                v
            };
            let v = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0)) / (4.0 * hs[i] * hs[j]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Symmetrizes and floors eigenvalues at `floor`. Returns `None` if any entry is non-finite.
pub fn repair_positive_definite(m: &DMatrix<f64>, floor: f64) -> Option<DMatrix<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    let d = DMatrix::from_diagonal(&vals);
    Some(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let mut vals: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    vals
}

pub(crate) fn to_dvector(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}
