//! Nelder-Mead simplex minimizer with dimension-adaptive coefficients and restarts.

/// Result of a minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct NelderMead {
    /// Hard cap on objective evaluations, restarts included.
    pub max_evals: usize,
    /// Converged when `(f_worst - f_best) <= f_rel_tol * max(|f_best|, 1)`.
    pub f_rel_tol: f64,
    /// ... and every vertex lies within `x_tol` of the best vertex (per coordinate).
    pub x_tol: f64,
    /// After convergence, rebuild the simplex around the best point this many times; a restart
    /// that improves by less than the objective tolerance confirms convergence.
    pub max_restarts: usize,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self {
            max_evals: 2000,
            f_rel_tol: 1e-6,
            x_tol: 1e-4,
            max_restarts: 2,
        }
    }
}

struct Counted<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn call(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

impl NelderMead {
    /// Minimizes `f` from `x0`; `steps[i]` is the initial simplex edge along coordinate `i`.
    pub fn minimize<F: FnMut(&[f64]) -> f64>(&self, f: F, x0: &[f64], steps: &[f64]) -> Minimum {
        assert_eq!(x0.len(), steps.len(), "one step per coordinate");
        let mut obj = Counted { f, evals: 0 };
        if x0.is_empty() {
            let v = obj.call(x0);
            return Minimum {
                x: Vec::new(),
                f: v,
                evals: obj.evals,
                converged: v.is_finite(),
            };
        }
        let (mut x, mut fx, mut converged) = self.run(&mut obj, x0.to_vec(), None, steps);
        let mut restarts = 0;
        while converged && restarts < self.max_restarts && obj.evals < self.max_evals {
            restarts += 1;
            let (x2, f2, c2) = self.run(&mut obj, x.clone(), Some(fx), steps);
            let improved = fx - f2 > self.f_rel_tol * fx.abs().max(1.0);
            if f2 < fx {
                x = x2;
                fx = f2;
            }
            converged = c2;
            if !improved {
                break;
            }
        }
        Minimum {
            x,
            f: fx,
            evals: obj.evals,
            converged,
        }
    }

    fn run<F: FnMut(&[f64]) -> f64>(
        &self,
        obj: &mut Counted<F>,
        x0: Vec<f64>,
        f0: Option<f64>,
        steps: &[f64],
    ) -> (Vec<f64>, f64, bool) {
        let n = x0.len();
        let nf = n as f64;
        let (alpha, beta, gamma, delta) = if n >= 2 {
            (1.0, 1.0 + 2.0 / nf, 0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf)
        } else {
            (1.0, 2.0, 0.5, 0.5)
        };

        let f0 = f0.unwrap_or_else(|| obj.call(&x0));
        let mut simplex: Vec<(Vec<f64>, f64)> = vec![(x0.clone(), f0)];
        for i in 0..n {
            let mut xi = x0.clone();
            xi[i] += steps[i];
            let fi = obj.call(&xi);
            simplex.push((xi, fi));
        }

        loop {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let f_best = simplex[0].1;
            let f_worst = simplex[n].1;
            let spread_ok = f_best.is_finite() && (f_worst - f_best) <= self.f_rel_tol * f_best.abs().max(1.0);
            let size_ok = simplex[1..]
                .iter()
                .all(|(x, _)| x.iter().zip(&simplex[0].0).all(|(a, b)| (a - b).abs() <= self.x_tol));
            if spread_ok && size_ok {
                return (simplex[0].0.clone(), f_best, true);
            }
            if obj.evals >= self.max_evals {
                return (simplex[0].0.clone(), f_best, false);
            }

            let mut centroid = vec![0.0; n];
            for (x, _) in &simplex[..n] {
                for (c, v) in centroid.iter_mut().zip(x) {
                    *c += v / nf;
                }
            }
            let worst = simplex[n].0.clone();
            let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&worst).map(|(c, w)| c + t * (c - w)).collect() };

            let xr = along(alpha);
            let fr = obj.call(&xr);
            if fr < simplex[0].1 {
                let xe = along(alpha * beta);
                let fe = obj.call(&xe);
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
                continue;
            }
            if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
                continue;
            }
            let (xc, fc) = if fr < simplex[n].1 {
                let xc = along(alpha * gamma);
                let fc = obj.call(&xc);
                (xc, fc)
            } else {
                let xc = along(-gamma);
                let fc = obj.call(&xc);
                (xc, fc)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
                continue;
            }
            // Shrink toward the best vertex.
            let best = simplex[0].0.clone();
            for v in simplex.iter_mut().skip(1) {
                let xs: Vec<f64> = best.iter().zip(&v.0).map(|(b, x)| b + delta * (x - b)).collect();
                let fs = obj.call(&xs);
                *v = (xs, fs);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let nm = NelderMead {
            max_evals: 20_000,
            f_rel_tol: 1e-14,
            x_tol: 1e-8,
            max_restarts: 3,
        };
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = nm.minimize(f, &[-1.2, 1.0], &[0.5, 0.5]);
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn quadratic_many_dims() {
        let nm = NelderMead {
            max_evals: 50_000,
            f_rel_tol: 1e-12,
            x_tol: 1e-7,
            max_restarts: 3,
        };
        let f = |x: &[f64]| {
            x.iter()
                .enumerate()
                .map(|(i, v)| (i + 1) as f64 * (v - 0.5).powi(2))
                .sum::<f64>()
        };
        let m = nm.minimize(f, &[0.0; 8], &[0.3; 8]);
        assert!(m.converged);
        assert!(m.x.iter().all(|v| (v - 0.5).abs() < 1e-4), "{:?}", m.x);
    }

    #[test]
    fn one_dimension_and_budget() {
        let m = NelderMead::default().minimize(|x: &[f64]| (x[0] - 3.0).powi(2), &[0.0], &[1.0]);
        assert!((m.x[0] - 3.0).abs() < 1e-3);
        let capped = NelderMead {
            max_evals: 5,
            ..Default::default()
        }
        .minimize(|x: &[f64]| (x[0] - 3.0).powi(2), &[0.0], &[1.0]);
        assert!(!capped.converged);
        assert!(capped.evals <= 6);
    }

    #[test]
    fn nan_treated_as_infinite() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { (x[0] - 1.0).powi(2) };
        let m = NelderMead::default().minimize(f, &[0.5], &[-1.0]);
        assert!((m.x[0] - 1.0).abs() < 1e-3);
    }
}
