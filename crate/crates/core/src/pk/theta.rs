//! Structural (fixed-effect) parameters and the sigmoid post-operative-day clearance.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::timeline::CovariateState;
use crate::error::{Error, Result};

/// Floor applied to linear-centered covariate multipliers so clearance stays positive.
pub const LINEAR_EFFECT_FLOOR: f64 = 1e-6;

/// Covariates available in the daily record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Covariate {
    #[serde(rename = "POD")]
    Pod,
    #[serde(rename = "ALB")]
    Alb,
    #[serde(rename = "ASAT")]
    Asat,
    #[serde(rename = "WT")]
    Weight,
}

impl Covariate {
    pub const ALL: [Covariate; 4] = [Covariate::Pod, Covariate::Alb, Covariate::Asat, Covariate::Weight];

    pub fn column(self) -> &'static str {
        match self {
            Covariate::Pod => "POD",
            Covariate::Alb => "ALB",
            Covariate::Asat => "ASAT",
            Covariate::Weight => "WT",
        }
    }
}

impl fmt::Display for Covariate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.column())
    }
}

/// Functional form of a covariate multiplier on clearance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectForm {
    /// `(x / ref)^coef`
    Power,
    /// `max(eps, 1 + coef * (x - ref))`
    LinearCentered,
    /// `exp(coef * (x - ref))`
    Exponential,
}

impl FromStr for EffectForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "power" => Ok(EffectForm::Power),
            "linear_centered" => Ok(EffectForm::LinearCentered),
            "exponential" => Ok(EffectForm::Exponential),
            other => Err(Error::Config(format!("unknown covariate effect form `{other}`"))),
        }
    }
}

/// One covariate effect on apparent clearance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateEffect {
    /// Parameter name used by priors and reports (e.g. `alb_on_cl`).
    pub name: String,
    pub covariate: Covariate,
    pub form: EffectForm,
    pub coefficient: f64,
    pub reference: f64,
}

impl CovariateEffect {
    pub fn new(
        name: impl Into<String>,
        covariate: Covariate,
        form: EffectForm,
        coefficient: f64,
        reference: f64,
    ) -> Self {
        Self {
            name: name.into(),
            covariate,
            form,
            coefficient,
            reference,
        }
    }

    /// Multiplier applied to clearance for covariate value `x`.
    pub fn multiplier(&self, x: f64) -> Result<f64> {
        if !(x > 0.0) || !x.is_finite() {
            return Err(Error::Domain(format!(
                "covariate {} must be strictly positive, got {x}",
                self.covariate
            )));
        }
        let m = match self.form {
            EffectForm::Power => {
                if !(self.reference > 0.0) {
                    return Err(Error::Config(format!(
                        "power effect `{}` needs a positive reference value",
                        self.name
                    )));
                }
                (x / self.reference).powf(self.coefficient)
            }
            EffectForm::LinearCentered => (1.0 + self.coefficient * (x - self.reference)).max(LINEAR_EFFECT_FLOOR),
            EffectForm::Exponential => (self.coefficient * (x - self.reference)).exp(),
        };
        Ok(m)
    }
}

/// Fixed effects of the structural model.
///
/// Clearance follows a sigmoid in the post-operative day,
/// `CL = CLmax * POD^gamma / (TCL50^gamma + POD^gamma)`, scaled by every covariate effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralTheta {
    /// Maximal apparent clearance, L/h.
    pub cl_max: f64,
    /// Post-operative day at which half of `cl_max` is reached, days.
    pub tcl50: f64,
    /// Sigmoidicity.
    pub gamma: f64,
    /// Apparent volume of distribution, L.
    pub v_f: f64,
    /// Absorption rate constant, 1/h. Never estimated.
    pub ka: f64,
    #[serde(default)]
    pub cov_effects: Vec<CovariateEffect>,
}

/// Addresses one scalar inside [`StructuralTheta`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ThetaParam {
    ClMax,
    Tcl50,
    Gamma,
    Vf,
    Ka,
    Effect(usize),
}

impl ThetaParam {
    pub fn name(self, theta: &StructuralTheta) -> String {
        match self {
            ThetaParam::ClMax => "cl_max".into(),
            ThetaParam::Tcl50 => "tcl50".into(),
            ThetaParam::Gamma => "gamma".into(),
            ThetaParam::Vf => "v_f".into(),
            ThetaParam::Ka => "ka".into(),
            ThetaParam::Effect(i) => theta.cov_effects[i].name.clone(),
        }
    }

    pub fn get(self, theta: &StructuralTheta) -> f64 {
        match self {
            ThetaParam::ClMax => theta.cl_max,
            ThetaParam::Tcl50 => theta.tcl50,
            ThetaParam::Gamma => theta.gamma,
            ThetaParam::Vf => theta.v_f,
            ThetaParam::Ka => theta.ka,
            ThetaParam::Effect(i) => theta.cov_effects[i].coefficient,
        }
    }

    pub fn set(self, theta: &mut StructuralTheta, value: f64) {
        match self {
            ThetaParam::ClMax => theta.cl_max = value,
            ThetaParam::Tcl50 => theta.tcl50 = value,
            ThetaParam::Gamma => theta.gamma = value,
            ThetaParam::Vf => theta.v_f = value,
            ThetaParam::Ka => theta.ka = value,
            ThetaParam::Effect(i) => theta.cov_effects[i].coefficient = value,
        }
    }

    /// Structural parameters are constrained positive; covariate coefficients are not.
    pub fn is_positive(self) -> bool {
        !matches!(self, ThetaParam::Effect(_))
    }

    pub fn is_estimable(self) -> bool {
        !matches!(self, ThetaParam::Ka)
    }
}

impl StructuralTheta {
    pub fn new(cl_max: f64, tcl50: f64, gamma: f64, v_f: f64, ka: f64) -> Self {
        Self {
            cl_max,
            tcl50,
            gamma,
            v_f,
            ka,
            cov_effects: Vec::new(),
        }
    }

    pub fn with_effect(mut self, effect: CovariateEffect) -> Self {
        self.cov_effects.push(effect);
        self
    }

    /// All parameters in canonical order.
    pub fn params(&self) -> Vec<ThetaParam> {
        let mut out = vec![
            ThetaParam::ClMax,
            ThetaParam::Tcl50,
            ThetaParam::Gamma,
            ThetaParam::Vf,
            ThetaParam::Ka,
        ];
        out.extend((0..self.cov_effects.len()).map(ThetaParam::Effect));
        out
    }

    pub fn param_by_name(&self, name: &str) -> Option<ThetaParam> {
        self.params().into_iter().find(|p| p.name(self) == name)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("cl_max", self.cl_max),
            ("tcl50", self.tcl50),
            ("gamma", self.gamma),
            ("v_f", self.v_f),
            ("ka", self.ka),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        for e in &self.cov_effects {
            if !e.coefficient.is_finite() || !e.reference.is_finite() {
                return Err(Error::Config(format!("covariate effect `{}` is not finite", e.name)));
            }
            if e.covariate == Covariate::Pod {
                return Err(Error::Config(format!(
                    "covariate effect `{}`: POD enters through the sigmoid only",
                    e.name
                )));
            }
        }
        let mut names: Vec<&str> = self.cov_effects.iter().map(|e| e.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("covariate effect names must be unique".into()));
        }
        Ok(())
    }

    /// Product of all covariate multipliers at `cov`.
    pub fn covariate_multiplier(&self, cov: &CovariateState) -> Result<f64> {
        self.cov_effects
            .iter()
            .try_fold(1.0, |acc, e| Ok(acc * e.multiplier(cov.value(e.covariate))?))
    }
}

/// `CLmax * POD^gamma / (TCL50^gamma + POD^gamma)`.
pub fn sigmoid_clearance(cl_max: f64, tcl50: f64, gamma: f64, pod: f64) -> f64 {
    // Divide through by POD^gamma so large POD does not overflow.
    let ratio = (tcl50 / pod).powf(gamma);
    cl_max / (1.0 + ratio)
}

/// Population clearance for covariate state `cov`, in L/h.
pub fn clearance_at(theta: &StructuralTheta, cov: &CovariateState) -> Result<f64> {
    if cov.pod < 1 {
        return Err(Error::Domain(format!("POD must be >= 1, got {}", cov.pod)));
    }
    let base = sigmoid_clearance(theta.cl_max, theta.tcl50, theta.gamma, f64::from(cov.pod));
    let cl = base * theta.covariate_multiplier(cov)?;
    if !(cl > 0.0) || !cl.is_finite() {
        return Err(Error::Domain(format!("clearance evaluated to {cl}")));
    }
    Ok(cl)
}


#[cfg(test)]
mod props {
    use proptest::prelude::*;

    use super::*;

    fn theta_strategy() -> impl Strategy<Value = StructuralTheta> {
        (1.0..100.0f64, 1u32..60, 0.2..8.0f64, 0.1..2.0f64, -1.0..1.0f64).prop_map(|(cl, t50, g, alb_k, asat_k)| {
            StructuralTheta::new(cl, f64::from(t50), g, 300.0, 3.0)
                .with_effect(CovariateEffect::new(
                    "alb_on_cl",
                    Covariate::Alb,
                    EffectForm::Power,
                    alb_k,
                    30.0,
                ))
                .with_effect(CovariateEffect::new(
                    "asat_on_cl",
                    Covariate::Asat,
                    EffectForm::Exponential,
                    asat_k / 100.0,
                    100.0,
                ))
        })
    }

    fn cov(pod: u32, alb: f64, asat: f64) -> CovariateState {
        CovariateState {
            pod,
            alb,
            asat,
            weight: 70.0,
        }
    }

    proptest! {
        #[test]
        fn strictly_increasing_in_pod(theta in theta_strategy(), a in 1u32..200, gap in 1u32..50, alb in 15.0..50.0f64, asat in 10.0..800.0f64) {
            let lo = clearance_at(&theta, &cov(a, alb, asat)).unwrap();
            let hi = clearance_at(&theta, &cov(a + gap, alb, asat)).unwrap();
            // Far past TCL50 the increment can fall below one ulp.
            prop_assert!(hi > lo || (theta.cl_max - lo) <= 1e-12 * theta.cl_max * 100.0);
        }

        #[test]
        fn half_maximum_times_multiplier(theta in theta_strategy(), alb in 15.0..50.0f64, asat in 10.0..800.0f64) {
            let c = cov(theta.tcl50 as u32, alb, asat);
            let cl = clearance_at(&theta, &c).unwrap();
            prop_assert_eq!(cl, theta.cl_max / 2.0 * theta.covariate_multiplier(&c).unwrap());
        }
    }
}
