use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pk::{EtaTarget, StructuralTheta, ThetaParam};

/// Whether Ω is estimated as a diagonal or a full covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaStructure {
    Diagonal,
    Full,
}

/// Covariance of the random effects, one row per declared [`EtaTarget`].
#[derive(Debug, Clone, PartialEq)]
pub struct Omega {
    etas: Vec<EtaTarget>,
    matrix: DMatrix<f64>,
    structure: OmegaStructure,
}

impl Omega {
    pub fn new(etas: Vec<EtaTarget>, matrix: DMatrix<f64>, structure: OmegaStructure) -> Result<Self> {
        let n = etas.len();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::Config(format!(
                "omega must be {n}x{n}, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let mut seen = etas.clone();
        seen.sort_by_key(|e| e.name());
        seen.dedup();
        if seen.len() != n {
            return Err(Error::Config("each eta target may appear once".into()));
        }
        let matrix = match structure {
            OmegaStructure::Diagonal => {
                if (0..n).any(|i| (0..n).any(|j| i != j && matrix[(i, j)] != 0.0)) {
                    return Err(Error::Config("diagonal omega has off-diagonal entries".into()));
                }
                matrix
            }
            OmegaStructure::Full => {
                if (0..n).any(|i| (0..n).any(|j| matrix[(i, j)] != matrix[(j, i)])) {
                    return Err(Error::Config("omega must be symmetric".into()));
                }
                matrix
            }
        };
        let om = Self {
            etas,
            matrix,
            structure,
        };
        om.cholesky()?;
        Ok(om)
    }

    pub fn diagonal(etas: Vec<EtaTarget>, variances: &[f64]) -> Result<Self> {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(variances));
        Self::new(etas, m, OmegaStructure::Diagonal)
    }

    pub fn etas(&self) -> &[EtaTarget] {
        &self.etas
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn structure(&self) -> OmegaStructure {
        self.structure
    }

    pub fn dim(&self) -> usize {
        self.etas.len()
    }

    pub fn index_of(&self, target: EtaTarget) -> Option<usize> {
        self.etas.iter().position(|e| *e == target)
    }

    /// Lower Cholesky factor; fails unless Ω is positive definite.
    pub fn cholesky(&self) -> Result<DMatrix<f64>> {
        if self.matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("omega has non-finite entries".into()));
        }
        self.matrix
            .clone()
            .cholesky()
            .map(|c| c.l())
            .ok_or_else(|| Error::Config("omega is not positive definite".into()))
    }

    /// `(Ω⁻¹, ln det Ω)`.
    pub fn inverse_and_logdet(&self) -> Result<(DMatrix<f64>, f64)> {
        if self.dim() == 0 {
            return Ok((DMatrix::zeros(0, 0), 0.0));
        }
        let chol = self
            .matrix
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Config("omega is not invertible".into()))?;
        let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok((chol.inverse(), logdet))
    }

    /// Same structure, new matrix.
    pub fn with_matrix(&self, matrix: DMatrix<f64>) -> Result<Self> {
        Self::new(self.etas.clone(), matrix, self.structure)
    }

    /// Ω scaled by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        self.with_matrix(&self.matrix * c)
    }

    /// Sub-matrix over a subset of eta targets.
    pub fn submatrix(&self, targets: &[EtaTarget]) -> Result<DMatrix<f64>> {
        let idx = targets
            .iter()
            .map(|t| {
                self.index_of(*t)
                    .ok_or_else(|| Error::Config(format!("eta `{}` is not declared in omega", t.name())))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_fn(idx.len(), idx.len(), |i, j| {
            self.matrix[(idx[i], idx[j])]
        }))
    }
}

/// Combined proportional + additive residual error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualError {
    /// Proportional SD (dimensionless).
    pub prop: f64,
    /// Additive SD, ng/mL.
    pub add: f64,
}

impl ResidualError {
    pub fn validate(&self) -> Result<()> {
        if !(self.prop >= 0.0 && self.add >= 0.0) || !self.prop.is_finite() || !self.add.is_finite() {
            return Err(Error::Config("residual error SDs must be finite and >= 0".into()));
        }
        if self.prop == 0.0 && self.add == 0.0 {
            return Err(Error::Config("residual error SDs cannot both be zero".into()));
        }
        Ok(())
    }
}

/// `σ_prop² · pred² + σ_add²`, in (ng/mL)².
pub fn residual_variance(pred: f64, sigma: &ResidualError) -> f64 {
    sigma.prop * sigma.prop * pred * pred + sigma.add * sigma.add
}

/// Population model: fixed effects with estimability, random-effect covariance, residual error.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationModel {
    pub theta: StructuralTheta,
    /// Parameters free during population estimation. Never contains `ka`.
    pub estimated: Vec<ThetaParam>,
    pub omega: Omega,
    pub sigma: ResidualError,
}

impl PopulationModel {
    /// Every structural parameter except `ka` estimated.
    pub fn new(theta: StructuralTheta, omega: Omega, sigma: ResidualError) -> Result<Self> {
        let estimated = theta.params().into_iter().filter(|p| p.is_estimable()).collect();
        let m = Self {
            theta,
            estimated,
            omega,
            sigma,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.theta.validate()?;
        self.sigma.validate()?;
        self.omega.cholesky()?;
        let n_eff = self.theta.cov_effects.len();
        for (i, p) in self.estimated.iter().enumerate() {
            if !p.is_estimable() {
                return Err(Error::Config("ka is fixed and cannot be estimated".into()));
            }
            if let ThetaParam::Effect(k) = p {
                if *k >= n_eff {
                    return Err(Error::Config(format!("estimated effect index {k} out of range")));
                }
            }
            if self.estimated[..i].contains(p) {
                return Err(Error::Config(format!(
                    "parameter `{}` flagged estimable twice",
                    p.name(&self.theta)
                )));
            }
        }
        Ok(())
    }

    pub fn eta_map(&self) -> &[EtaTarget] {
        self.omega.etas()
    }

    pub fn n_eta(&self) -> usize {
        self.omega.dim()
    }

    pub fn is_estimated(&self, p: ThetaParam) -> bool {
        self.estimated.contains(&p)
    }

    /// Fixes `name` at its current value.
    pub fn fix(mut self, name: &str) -> Result<Self> {
        let p = self
            .theta
            .param_by_name(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?;
        self.estimated.retain(|q| *q != p);
        Ok(self)
    }

    /// Drops every covariate effect (and its estimability flag).
    pub fn without_covariates(mut self) -> Self {
        self.theta.cov_effects.clear();
        self.estimated.retain(|p| !matches!(p, ThetaParam::Effect(_)));
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn residual_variance_examples() {
        let add = ResidualError { prop: 0.0, add: 1.0 };
        assert_eq!(residual_variance(7.0, &add), 1.0);
        let prop = ResidualError { prop: 0.2, add: 0.0 };
        assert!((residual_variance(10.0, &prop) - 4.0).abs() < 1e-12);
        let both = ResidualError { prop: 0.2, add: 1.0 };
        assert!((residual_variance(10.0, &both) - 5.0).abs() < 1e-12);
        assert!(ResidualError { prop: 0.0, add: 0.0 }.validate().is_err());
    }

    #[test]
    fn omega_validation() {
        assert!(Omega::diagonal(vec![EtaTarget::Cl, EtaTarget::V], &[0.1, 0.2]).is_ok());
        assert!(Omega::diagonal(vec![EtaTarget::Cl], &[-0.1]).is_err());
        assert!(Omega::diagonal(vec![EtaTarget::Cl, EtaTarget::Cl], &[0.1, 0.1]).is_err());
        let full = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.2, 0.1]);
        assert!(Omega::new(vec![EtaTarget::Cl, EtaTarget::V], full, OmegaStructure::Full).is_err());
        let om = Omega::diagonal(vec![EtaTarget::Cl, EtaTarget::V], &[0.25, 1.0]).unwrap();
        let (inv, logdet) = om.inverse_and_logdet().unwrap();
        assert!((inv[(0, 0)] - 4.0).abs() < 1e-12);
        assert!((logdet - 0.25f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn estimability() {
        let theta = StructuralTheta::new(20.0, 5.0, 2.0, 100.0, 4.0);
        let om = Omega::diagonal(vec![EtaTarget::Cl], &[0.1]).unwrap();
        let m = PopulationModel::new(theta, om, ResidualError { prop: 0.1, add: 0.5 }).unwrap();
        assert!(!m.is_estimated(ThetaParam::Ka));
        assert_eq!(m.estimated.len(), 4);
        let mut bad = m.clone();
        bad.estimated.push(ThetaParam::Ka);
        assert!(bad.validate().is_err());
        let fixed = m.fix("gamma").unwrap();
        assert!(!fixed.is_estimated(ThetaParam::Gamma));
    }
}
