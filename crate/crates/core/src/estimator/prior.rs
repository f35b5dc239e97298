//! Informative priors on population parameters with per-block weights.
//!
//! θ block `k`: `w · (θ_k − μ_k)² / SE_k²`, on the natural parameter scale.
//!
//! Ω block over eta subset `E` with prior matrix `Ψ`, degrees of freedom `ν` and weight `w`:
//! the inverse-Wishart −2·log-kernel with `ν_eff = w·ν` and scale `S = ν_eff·Ψ`,
//!
//! ```text
//! tr(S Ω_E⁻¹) + ν_eff · ln det Ω_E − ν_eff · (q + ln det Ψ)
//! ```
//!
//! The subtracted constant makes each block exactly 0 at `Ω_E = Ψ` (its minimum) and
//! non-negative elsewhere, so penalty values are comparable across runs. Any block with
//! weight 0 contributes exactly 0.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::model::PopulationModel;
use crate::error::{Error, Result};
use crate::pk::EtaTarget;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaPrior {
    /// Structural parameter or covariate-effect name.
    pub name: String,
    pub mean: f64,
    /// Standard error of the reference estimate.
    pub se: f64,
    /// 0 = uninformative, 1 = fully informative.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmegaPrior {
    pub etas: Vec<EtaTarget>,
    pub matrix: DMatrix<f64>,
    pub nu: f64,
    pub weight: f64,
}

/// A weightable unit of prior information.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PriorBlock {
    Theta(usize),
    Omega(usize),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PriorSpec {
    pub theta: Vec<ThetaPrior>,
    pub omega: Vec<OmegaPrior>,
}

/// Penalty split by block family.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Penalty {
    pub theta: f64,
    pub omega: f64,
}

impl Penalty {
    pub fn total(&self) -> f64 {
        self.theta + self.omega
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        for p in &self.theta {
            if !(p.weight >= 0.0) || !p.weight.is_finite() {
                return Err(Error::Config(format!("prior weight for `{}` must be >= 0", p.name)));
            }
            if p.weight > 0.0 && !(p.se > 0.0) {
                return Err(Error::Config(format!("prior SE for `{}` must be > 0", p.name)));
            }
            if !p.mean.is_finite() {
                return Err(Error::Config(format!("prior mean for `{}` is not finite", p.name)));
            }
        }
        for (i, p) in self.omega.iter().enumerate() {
            let q = p.etas.len();
            if p.matrix.nrows() != q || p.matrix.ncols() != q {
                return Err(Error::Config(format!("omega prior block {i} has the wrong shape")));
            }
            if !(p.weight >= 0.0) || !p.weight.is_finite() {
                return Err(Error::Config(format!("omega prior block {i}: weight must be >= 0")));
            }
            if p.weight > 0.0 {
                if !(p.nu >= q as f64) {
                    return Err(Error::Config(format!(
                        "omega prior block {i}: degrees of freedom {} below dimension {q}",
                        p.nu
                    )));
                }
                if p.matrix.clone().cholesky().is_none() {
                    return Err(Error::Config(format!("omega prior block {i} is not positive definite")));
                }
            }
        }
        Ok(())
    }

    pub fn blocks(&self) -> Vec<PriorBlock> {
        (0..self.theta.len())
            .map(PriorBlock::Theta)
            .chain((0..self.omega.len()).map(PriorBlock::Omega))
            .collect()
    }

    pub fn weight(&self, block: PriorBlock) -> f64 {
        match block {
            PriorBlock::Theta(i) => self.theta[i].weight,
            PriorBlock::Omega(i) => self.omega[i].weight,
        }
    }

    pub fn set_weight(&mut self, block: PriorBlock, w: f64) {
        match block {
            PriorBlock::Theta(i) => self.theta[i].weight = w,
            PriorBlock::Omega(i) => self.omega[i].weight = w,
        }
    }

    pub fn block_name(&self, block: PriorBlock) -> String {
        match block {
            PriorBlock::Theta(i) => self.theta[i].name.clone(),
            PriorBlock::Omega(i) => {
                let names: Vec<&str> = self.omega[i].etas.iter().map(|e| e.name()).collect();
                format!("omega[{}]", names.join(","))
            }
        }
    }

    pub fn with_all_weights(mut self, w: f64) -> Self {
        for b in self.blocks() {
            self.set_weight(b, w);
        }
        self
    }

    /// Every standard error replaced by `se` (used to pin estimates in tests).
    pub fn with_all_se(mut self, se: f64) -> Self {
        for p in &mut self.theta {
            p.se = se;
        }
        self
    }

    pub fn is_uninformative(&self) -> bool {
        self.blocks().into_iter().all(|b| self.weight(b) == 0.0)
    }
}

fn omega_block(model: &PopulationModel, prior: &OmegaPrior) -> Result<f64> {
    let q = prior.etas.len() as f64;
    let nu_eff = prior.weight * prior.nu;
    let sub = model.omega.submatrix(&prior.etas)?;
    let chol = sub
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Config("omega is singular".into()))?;
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let inv = chol.inverse();
    let prior_chol = prior
        .matrix
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Config("omega prior is singular".into()))?;
    let prior_logdet = 2.0 * prior_chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let scale = &prior.matrix * nu_eff;
    let trace = (scale * inv).trace();
    Ok(trace + nu_eff * logdet - nu_eff * (q + prior_logdet))
}

/// Penalty terms per block family. Priors naming parameters absent from the model are inert.
pub fn prior_penalty_terms(model: &PopulationModel, prior: &PriorSpec) -> Result<Penalty> {
    let mut out = Penalty::default();
    for p in &prior.theta {
        if p.weight == 0.0 {
            continue;
        }
        if let Some(param) = model.theta.param_by_name(&p.name) {
            let d = param.get(&model.theta) - p.mean;
            out.theta += p.weight * d * d / (p.se * p.se);
        }
    }
    for p in &prior.omega {
        if p.weight == 0.0 {
            continue;
        }
        out.omega += omega_block(model, p)?;
    }
    Ok(out)
}

pub fn prior_penalty(model: &PopulationModel, prior: &PriorSpec) -> Result<f64> {
    Ok(prior_penalty_terms(model, prior)?.total())
}


#[cfg(test)]
mod props {
    use proptest::prelude::*;

    use super::*;
    use crate::estimator::model::{Omega, ResidualError};
    use crate::pk::StructuralTheta;

    proptest! {
        #[test]
        fn penalty_grows_continuously_with_weight(
            cl in 5.0..40.0f64,
            om in (0.02..1.0f64, 0.02..1.0f64),
            mean in 5.0..40.0f64,
            w in prop::collection::vec(0.0..1.0f64, 2..8),
        ) {
            let model = PopulationModel::new(
                StructuralTheta::new(cl, 5.0, 2.0, 100.0, 4.0),
                Omega::diagonal(vec![EtaTarget::Cl, EtaTarget::V], &[om.0, om.1]).unwrap(),
                ResidualError { prop: 0.1, add: 0.5 },
            )
            .unwrap();
            let at = |w: f64| {
                let p = PriorSpec {
                    theta: vec![ThetaPrior { name: "cl_max".into(), mean, se: 2.0, weight: w }],
                    omega: vec![OmegaPrior {
                        etas: vec![EtaTarget::Cl, EtaTarget::V],
                        matrix: DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&[0.1, 0.2])),
                        nu: 10.0,
                        weight: w,
                    }],
                };
                prior_penalty_terms(&model, &p).unwrap()
            };
            prop_assert_eq!(at(0.0).total(), 0.0);
            let mut ws = w.clone();
            ws.sort_by(f64::total_cmp);
            for pair in ws.windows(2) {
                let (a, b) = (at(pair[0]), at(pair[1]));
                prop_assert!(a.theta <= b.theta && a.omega <= b.omega + 1e-12);
            }
            let w0 = ws[0];
            let near = at(w0 + 1e-9).total();
            prop_assert!((near - at(w0).total()).abs() <= 1e-6 * (1.0 + at(1.0).total()));
        }
    }
}
