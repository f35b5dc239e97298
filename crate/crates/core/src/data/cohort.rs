use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pk::EventTimeline;

/// A dataset row rejected during parsing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    /// 1-based line number in the source file (header is line 1).
    pub line: u64,
    pub patient_id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    /// SHA-256 of the source bytes, hex.
    pub digest: String,
    pub n_rows: usize,
    pub n_rows_accepted: usize,
    pub exclusions: Vec<Exclusion>,
    /// Digest of the cohort this one was derived from.
    pub parent_digest: Option<String>,
    /// How this cohort was derived from its parent, e.g. `split:estimation`.
    pub derivation: Option<String>,
    pub warnings: Vec<String>,
}

/// Patients of one dataset with where they came from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Cohort {
    pub patients: Vec<EventTimeline>,
    /// Per-patient numeric columns outside the event contract (first value seen).
    pub attributes: BTreeMap<String, BTreeMap<String, f64>>,
    pub provenance: Provenance,
}

impl Cohort {
    pub fn new(patients: Vec<EventTimeline>, provenance: Provenance) -> Result<Self> {
        let c = Self {
            patients,
            attributes: BTreeMap::new(),
            provenance,
        };
        c.check_unique_ids()?;
        Ok(c)
    }

    pub(crate) fn check_unique_ids(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for p in &self.patients {
            if !seen.insert(p.patient_id.as_str()) {
                return Err(Error::data(&p.patient_id, "duplicate patient id in cohort"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.patients.iter().map(|p| p.patient_id.as_str()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&EventTimeline> {
        self.patients.iter().find(|p| p.patient_id == id)
    }

    pub fn n_observed(&self) -> usize {
        self.patients.iter().map(EventTimeline::n_observed).sum()
    }

    /// Sub-cohort with the given patients, recording the derivation.
    pub fn derive(&self, patients: Vec<EventTimeline>, derivation: &str) -> Cohort {
        let attributes = patients
            .iter()
            .filter_map(|p| {
                self.attributes
                    .get(&p.patient_id)
                    .map(|a| (p.patient_id.clone(), a.clone()))
            })
            .collect();
        Cohort {
            patients,
            attributes,
            provenance: Provenance {
                source: self.provenance.source.clone(),
                digest: self.provenance.digest.clone(),
                n_rows: self.provenance.n_rows,
                n_rows_accepted: self.provenance.n_rows_accepted,
                exclusions: Vec::new(),
                parent_digest: Some(self.provenance.digest.clone()),
                derivation: Some(derivation.to_string()),
                warnings: Vec::new(),
            },
        }
    }
}
