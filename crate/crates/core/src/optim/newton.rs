//! Damped Newton iteration with finite-difference derivatives, for low-dimensional smooth
//! problems such as individual random-effect estimation.

use nalgebra::{DMatrix, SymmetricEigen};

use super::fd::{gradient, hessian, to_dvector};
use super::nelder_mead::Minimum;

#[derive(Debug, Clone)]
pub struct Newton {
    pub max_iter: usize,
    /// Stop when the predicted decrease `-g'd/2` falls below `decrease_tol * max(|f|, 1)`.
    pub decrease_tol: f64,
    pub grad_step: f64,
    pub hess_step: f64,
}

impl Default for Newton {
    fn default() -> Self {
        Self {
            max_iter: 100,
            decrease_tol: 1e-12,
            grad_step: 1e-6,
            hess_step: 1e-4,
        }
    }
}

/// Eigenvalue-modified inverse so the step is always a descent direction.
fn modified_solve(h: &DMatrix<f64>, g: &[f64]) -> Option<Vec<f64>> {
    if h.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let sym = (h + h.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
    let inv = eig.eigenvalues.map(|v| 1.0 / v.abs().max(1e-8 * scale));
    let q = &eig.eigenvectors;
    let qg = q.transpose() * to_dvector(g);
    let d = q * qg.component_mul(&inv);
    Some(d.iter().map(|v| -v).collect())
}

impl Newton {
    pub fn minimize<F: FnMut(&[f64]) -> f64>(&self, mut f: F, x0: &[f64]) -> Minimum {
        let mut evals = 0usize;
        let mut call = |x: &[f64]| {
            evals += 1;
            let v = f(x);
            if v.is_nan() {
                f64::INFINITY
            } else {
                v
            }
        };
        let mut x = x0.to_vec();
        let mut fx = call(&x);
        if x.is_empty() || !fx.is_finite() {
            let converged = x.is_empty() && fx.is_finite();
            drop(call);
            return Minimum {
                x,
                f: fx,
                evals,
                converged,
            };
        }
        let mut converged = false;
        for _ in 0..self.max_iter {
            let g = gradient(&mut call, &x, self.grad_step);
            let h = hessian(&mut call, &x, fx, self.hess_step);
            let Some(d) = modified_solve(&h, &g) else { break };
            let slope: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
            if !slope.is_finite() {
                break;
            }
            if -0.5 * slope <= self.decrease_tol * fx.abs().max(1.0) {
                converged = true;
                break;
            }
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let xt: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
                let ft = call(&xt);
                if ft <= fx + 1e-4 * t * slope {
                    x = xt;
                    fx = ft;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                // No decrease along a descent direction: at the noise floor of the FD derivatives.
                converged = g.iter().all(|v| v.abs() < 1e-5 * fx.abs().max(1.0));
                break;
            }
        }
        drop(call);
        Minimum {
            x,
            f: fx,
            evals,
            converged,
        }
    }
}
