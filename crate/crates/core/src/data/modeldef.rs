//! Model-definition JSON: structural parameters, covariate effects, random effects, residual
//! error and priors.
//!
//! Errors carry a JSON path such as `.structural.cl_max`. Unknown keys are rejected in strict
//! mode and reported as warnings in lenient mode. Serialization is canonical: fixed key order,
//! every optional field resolved, two-space indentation and a trailing newline.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{Omega, OmegaPrior, OmegaStructure, PopulationModel, PriorSpec, ResidualError, ThetaPrior};
use crate::pk::{Covariate, CovariateEffect, EffectForm, EtaTarget, StructuralTheta, ThetaParam};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDef {
    pub value: f64,
    #[serde(default)]
    pub unit: Option<String>,
    /// Free during population estimation. Defaults to true, except for `ka`.
    #[serde(default)]
    pub estimate: Option<bool>,
}

impl ParamDef {
    pub fn new(value: f64, unit: &str, estimate: bool) -> Self {
        Self {
            value,
            unit: Some(unit.to_string()),
            estimate: Some(estimate),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralBlock {
    pub cl_max: ParamDef,
    pub tcl50: ParamDef,
    pub gamma: ParamDef,
    pub v_f: ParamDef,
    pub ka: ParamDef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectDef {
    pub name: String,
    pub covariate: Covariate,
    pub form: EffectForm,
    pub coefficient: f64,
    pub reference: f64,
    #[serde(default)]
    pub estimate: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomEffectsBlock {
    pub etas: Vec<EtaTarget>,
    #[serde(default = "default_structure")]
    pub structure: OmegaStructure,
    /// Row-major covariance matrix.
    pub omega: Vec<Vec<f64>>,
}

fn default_structure() -> OmegaStructure {
    OmegaStructure::Diagonal
}

impl Default for RandomEffectsBlock {
    fn default() -> Self {
        Self {
            etas: Vec::new(),
            structure: OmegaStructure::Diagonal,
            omega: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaPriorDef {
    pub name: String,
    pub mean: f64,
    pub se: f64,
    #[serde(default)]
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaPriorDef {
    pub etas: Vec<EtaTarget>,
    pub matrix: Vec<Vec<f64>>,
    pub nu: f64,
    #[serde(default)]
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PriorBlockDef {
    #[serde(default)]
    pub theta: Vec<ThetaPriorDef>,
    #[serde(default)]
    pub omega: Vec<OmegaPriorDef>,
}

/// Default residual error: 20% proportional, no additive part.
pub fn default_error() -> ResidualError {
    ResidualError { prop: 0.2, add: 0.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDefinition {
    pub id: String,
    #[serde(default)]
    pub description: Option<String>,
    pub structural: StructuralBlock,
    #[serde(default)]
    pub covariate_effects: Vec<EffectDef>,
    #[serde(default)]
    pub random_effects: RandomEffectsBlock,
    #[serde(default = "default_error")]
    pub error: ResidualError,
    #[serde(default)]
    pub prior: PriorBlockDef,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strictness {
    #[default]
    Strict,
    Lenient,
}

/// A parsed definition and the unknown keys skipped in lenient mode.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub definition: ModelDefinition,
    pub warnings: Vec<String>,
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.into(),
        message: message.into(),
    }
}

fn ignored_path(p: &serde_ignored::Path<'_>) -> String {
    use serde_ignored::Path as P;
    match p {
        P::Root => String::new(),
        P::Seq { parent, index } => format!("{}[{index}]", ignored_path(parent)),
        P::Map { parent, key } => format!("{}.{key}", ignored_path(parent)),
        P::Some { parent } | P::NewtypeStruct { parent } | P::NewtypeVariant { parent } => ignored_path(parent),
    }
}

fn matrix_from_rows(rows: &[Vec<f64>], n: usize, path: &str) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(schema(path, format!("expected a {n}x{n} matrix")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(schema(path, "matrix entries must be finite"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn rows_from_matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

impl ModelDefinition {
    /// Parses JSON text.
    pub fn from_json(text: &str, strictness: Strictness) -> Result<LoadedModel> {
        let mut unknown = Vec::new();
        let mut de = serde_json::Deserializer::from_str(text);
        let mut record = |p: serde_ignored::Path<'_>| unknown.push(ignored_path(&p));
        let ignoring = serde_ignored::Deserializer::new(&mut de, &mut record);
        let definition: ModelDefinition = serde_path_to_error::deserialize(ignoring).map_err(|e| {
            let path = e.path().to_string();
            let path = if path.starts_with('.') {
                path
            } else {
                format!(".{path}")
            };
            schema(path, e.into_inner().to_string())
        })?;
        de.end().map_err(|e| schema(".", e.to_string()))?;
        if let Some(first) = unknown.first() {
            if strictness == Strictness::Strict {
                return Err(schema(first.clone(), "unknown key"));
            }
        }
        let warnings = unknown
            .into_iter()
            .map(|p| {
                let msg = format!("unknown key {p} ignored");
                log::warn!("{msg}");
                msg
            })
            .collect();
        definition.validate()?;
        Ok(LoadedModel { definition, warnings })
    }

    /// Canonical JSON.
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&self.canonical())?;
        s.push('\n');
        Ok(s)
    }

    /// Same definition with every defaulted flag made explicit.
    pub fn canonical(&self) -> ModelDefinition {
        let mut d = self.clone();
        let s = &mut d.structural;
        for (p, default) in [
            (&mut s.cl_max, true),
            (&mut s.tcl50, true),
            (&mut s.gamma, true),
            (&mut s.v_f, true),
            (&mut s.ka, false),
        ] {
            p.estimate.get_or_insert(default);
        }
        for e in &mut d.covariate_effects {
            e.estimate.get_or_insert(true);
        }
        d
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.structural;
        for (name, p) in [
            ("cl_max", &s.cl_max),
            ("tcl50", &s.tcl50),
            ("gamma", &s.gamma),
            ("v_f", &s.v_f),
            ("ka", &s.ka),
        ] {
            if !(p.value > 0.0) || !p.value.is_finite() {
                return Err(schema(
                    format!(".structural.{name}"),
                    format!("must be > 0, got {}", p.value),
                ));
            }
        }
        if s.ka.estimate == Some(true) {
            return Err(schema(".structural.ka.estimate", "ka cannot be estimated"));
        }
        let mut names: BTreeSet<&str> = ["cl_max", "tcl50", "gamma", "v_f", "ka"].into_iter().collect();
        for (i, e) in self.covariate_effects.iter().enumerate() {
            let path = format!(".covariate_effects[{i}]");
            if !names.insert(e.name.as_str()) {
                return Err(schema(
                    format!("{path}.name"),
                    format!("duplicate parameter name `{}`", e.name),
                ));
            }
            if e.covariate == Covariate::Pod {
                return Err(schema(
                    format!("{path}.covariate"),
                    "POD enters clearance through the sigmoid only",
                ));
            }
            if !e.coefficient.is_finite() {
                return Err(schema(format!("{path}.coefficient"), "must be finite"));
            }
            if !e.reference.is_finite() || (e.form == EffectForm::Power && !(e.reference > 0.0)) {
                return Err(schema(
                    format!("{path}.reference"),
                    "must be finite, and > 0 for the power form",
                ));
            }
        }
        let re = &self.random_effects;
        let mut seen = BTreeSet::new();
        for (i, t) in re.etas.iter().enumerate() {
            if !seen.insert(*t) {
                return Err(schema(
                    format!(".random_effects.etas[{i}]"),
                    "duplicate random-effect target",
                ));
            }
        }
        let omega = matrix_from_rows(&re.omega, re.etas.len(), ".random_effects.omega")?;
        Omega::new(re.etas.clone(), omega, re.structure).map_err(|e| schema(".random_effects.omega", e.to_string()))?;
        self.error.validate().map_err(|e| schema(".error", e.to_string()))?;

        for (i, p) in self.prior.theta.iter().enumerate() {
            let path = format!(".prior.theta[{i}]");
            if !names.contains(p.name.as_str()) {
                return Err(schema(
                    format!("{path}.name"),
                    format!("unknown parameter `{}`", p.name),
                ));
            }
            if !(p.weight >= 0.0) || !p.weight.is_finite() {
                return Err(schema(format!("{path}.weight"), "must be >= 0"));
            }
            if !p.mean.is_finite() {
                return Err(schema(format!("{path}.mean"), "must be finite"));
            }
            if !(p.se > 0.0) || !p.se.is_finite() {
                return Err(schema(format!("{path}.se"), "must be > 0"));
            }
        }
        for (i, p) in self.prior.omega.iter().enumerate() {
            let path = format!(".prior.omega[{i}]");
            for (k, t) in p.etas.iter().enumerate() {
                if !re.etas.contains(t) {
                    return Err(schema(format!("{path}.etas[{k}]"), "target has no random effect"));
                }
            }
            let m = matrix_from_rows(&p.matrix, p.etas.len(), &format!("{path}.matrix"))?;
            if m.cholesky().is_none() {
                return Err(schema(format!("{path}.matrix"), "must be positive definite"));
            }
            if !(p.nu >= p.etas.len() as f64) || !p.nu.is_finite() {
                return Err(schema(format!("{path}.nu"), "must be at least the block dimension"));
            }
            if !(p.weight >= 0.0) || !p.weight.is_finite() {
                return Err(schema(format!("{path}.weight"), "must be >= 0"));
            }
        }
        Ok(())
    }

    /// Builds the population model and prior.
    pub fn to_model(&self) -> Result<(PopulationModel, PriorSpec)> {
        self.validate()?;
        let d = self.canonical();
        let s = &d.structural;
        let mut theta = StructuralTheta::new(s.cl_max.value, s.tcl50.value, s.gamma.value, s.v_f.value, s.ka.value);
        for e in &d.covariate_effects {
            theta = theta.with_effect(CovariateEffect::new(
                e.name.clone(),
                e.covariate,
                e.form,
                e.coefficient,
                e.reference,
            ));
        }
        let mut estimated = Vec::new();
        for (p, def) in [
            (ThetaParam::ClMax, &s.cl_max),
            (ThetaParam::Tcl50, &s.tcl50),
            (ThetaParam::Gamma, &s.gamma),
            (ThetaParam::Vf, &s.v_f),
        ] {
            if def.estimate == Some(true) {
                estimated.push(p);
            }
        }
        for (k, e) in d.covariate_effects.iter().enumerate() {
            if e.estimate == Some(true) {
                estimated.push(ThetaParam::Effect(k));
            }
        }
        let re = &d.random_effects;
        let omega = Omega::new(
            re.etas.clone(),
            matrix_from_rows(&re.omega, re.etas.len(), ".random_effects.omega")?,
            re.structure,
        )?;
        let model = PopulationModel {
            theta,
            estimated,
            omega,
            sigma: d.error,
        };
        model.validate()?;
        let prior = PriorSpec {
            theta: d
                .prior
                .theta
                .iter()
                .map(|p| ThetaPrior {
                    name: p.name.clone(),
                    mean: p.mean,
                    se: p.se,
                    weight: p.weight,
                })
                .collect(),
            omega: d
                .prior
                .omega
                .iter()
                .map(|p| {
                    Ok(OmegaPrior {
                        etas: p.etas.clone(),
                        matrix: matrix_from_rows(&p.matrix, p.etas.len(), ".prior.omega")?,
                        nu: p.nu,
                        weight: p.weight,
                    })
                })
                .collect::<Result<_>>()?,
        };
        prior.validate()?;
        Ok((model, prior))
    }

    /// Definition describing `model` and `prior`; units are taken from `template` when given.
    pub fn from_model(
        id: &str,
        description: Option<String>,
        model: &PopulationModel,
        prior: &PriorSpec,
        template: Option<&ModelDefinition>,
    ) -> ModelDefinition {
        let t = &model.theta;
        let unit = |name: &str, fallback: &str| -> Option<String> {
            let from_template = template.and_then(|d| {
                let s = &d.structural;
                match name {
                    "cl_max" => s.cl_max.unit.clone(),
                    "tcl50" => s.tcl50.unit.clone(),
                    "gamma" => s.gamma.unit.clone(),
                    "v_f" => s.v_f.unit.clone(),
                    _ => s.ka.unit.clone(),
                }
            });
            from_template.or_else(|| Some(fallback.to_string()))
        };
        let param = |p: ThetaParam, name: &str, fallback: &str| ParamDef {
            value: p.get(t),
            unit: unit(name, fallback),
            estimate: Some(model.is_estimated(p)),
        };
        ModelDefinition {
            id: id.to_string(),
            description,
            structural: StructuralBlock {
                cl_max: param(ThetaParam::ClMax, "cl_max", "L/h"),
                tcl50: param(ThetaParam::Tcl50, "tcl50", "day"),
                gamma: param(ThetaParam::Gamma, "gamma", "-"),
                v_f: param(ThetaParam::Vf, "v_f", "L"),
                ka: param(ThetaParam::Ka, "ka", "1/h"),
            },
            covariate_effects: t
                .cov_effects
                .iter()
                .enumerate()
                .map(|(k, e)| EffectDef {
                    name: e.name.clone(),
                    covariate: e.covariate,
                    form: e.form,
                    coefficient: e.coefficient,
                    reference: e.reference,
                    estimate: Some(model.is_estimated(ThetaParam::Effect(k))),
                })
                .collect(),
            random_effects: RandomEffectsBlock {
                etas: model.eta_map().to_vec(),
                structure: model.omega.structure(),
                omega: rows_from_matrix(model.omega.matrix()),
            },
            error: model.sigma,
            prior: PriorBlockDef {
                theta: prior
                    .theta
                    .iter()
                    .map(|p| ThetaPriorDef {
                        name: p.name.clone(),
                        mean: p.mean,
                        se: p.se,
                        weight: p.weight,
                    })
                    .collect(),
                omega: prior
                    .omega
                    .iter()
                    .map(|p| OmegaPriorDef {
                        etas: p.etas.clone(),
                        matrix: rows_from_matrix(&p.matrix),
                        nu: p.nu,
                        weight: p.weight,
                    })
                    .collect(),
            },
        }
    }
}

pub fn load_model_def(path: impl AsRef<Path>, strictness: Strictness) -> Result<LoadedModel> {
    let text = std::fs::read_to_string(path)?;
    ModelDefinition::from_json(&text, strictness)
}

pub fn save_model_def(def: &ModelDefinition, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, def.to_json()?)?;
    Ok(())
}
