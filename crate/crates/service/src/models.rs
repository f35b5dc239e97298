//! Population models available to the API: the built-in reference model plus every
//! definition under `<data_dir>/models/*.json`.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context};
use serde::Serialize;
use tdm_core::data::{load_model_def, ModelDefinition, Strictness};
use tdm_core::estimator::{PopulationModel, PriorSpec};
use tdm_core::synth::reference_model;

pub const REFERENCE_ID: &str = "reference";

#[derive(Debug, Clone)]
pub struct ModelEntry {
    pub definition: ModelDefinition,
    pub model: PopulationModel,
    pub source: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelSummary {
    pub id: String,
    pub description: Option<String>,
    pub source: String,
    pub default: bool,
    pub eta: Vec<String>,
    pub definition: ModelDefinition,
}

#[derive(Debug, Clone)]
pub struct Registry {
    entries: BTreeMap<String, ModelEntry>,
    default_id: String,
}

pub fn reference_definition() -> ModelDefinition {
    ModelDefinition::from_model(
        REFERENCE_ID,
        Some("Synthetic reference model".into()),
        &reference_model(),
        &PriorSpec::default(),
        None,
    )
}

impl Registry {
    /// Loads definitions from `models_dir` (if it exists) beside the built-in model.
    pub fn load(models_dir: &Path, default_id: Option<&str>) -> anyhow::Result<Self> {
        let mut entries = BTreeMap::new();
        let reference = reference_definition();
        entries.insert(
            REFERENCE_ID.to_string(),
            ModelEntry {
                model: reference.to_model()?.0,
                definition: reference,
                source: "builtin".into(),
            },
        );
        if models_dir.is_dir() {
            let mut paths: Vec<_> = std::fs::read_dir(models_dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            paths.sort();
            for path in paths {
                let loaded = load_model_def(&path, Strictness::Strict)
                    .with_context(|| format!("loading model definition {}", path.display()))?;
                let def = loaded.definition;
                let (model, _) = def.to_model().with_context(|| format!("building model {}", def.id))?;
                if entries.contains_key(&def.id) {
                    bail!("model id {} in {} is already defined", def.id, path.display());
                }
                entries.insert(
                    def.id.clone(),
                    ModelEntry {
                        definition: def,
                        model,
                        source: path.display().to_string(),
                    },
                );
            }
        }
        let default_id = default_id.unwrap_or(REFERENCE_ID).to_string();
        if !entries.contains_key(&default_id) {
            bail!("default model {default_id} is not defined");
        }
        Ok(Self { entries, default_id })
    }

    pub fn get(&self, id: &str) -> Option<&ModelEntry> {
        self.entries.get(id)
    }

    pub fn default_id(&self) -> &str {
        &self.default_id
    }

    pub fn summaries(&self) -> Vec<ModelSummary> {
        self.entries
            .iter()
            .map(|(id, e)| ModelSummary {
                id: id.clone(),
                description: e.definition.description.clone(),
                source: e.source.clone(),
                default: *id == self.default_id,
                eta: e.model.eta_map().iter().map(|t| t.name().to_string()).collect(),
                definition: e.definition.clone(),
            })
            .collect()
    }
}
