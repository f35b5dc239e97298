//! Prediction error and its bias/imprecision summaries.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `(pred − obs) / obs × 100`.
pub fn prediction_error(pred: f64, obs: f64) -> Result<f64> {
    if !(obs > 0.0) || !obs.is_finite() {
        return Err(Error::Domain(format!("observed concentration must be > 0, got {obs}")));
    }
    Ok((pred - obs) / obs * 100.0)
}

/// One forecast of one observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub patient_id: String,
    /// 1-based ordinal of the predicted observation within the patient.
    pub obs_index: usize,
    /// Number of earlier observations the prediction was conditioned on.
    pub n_obs: usize,
    pub pred: f64,
    pub obs: f64,
    pub pe_percent: f64,
}

impl PredictionRecord {
    pub fn new(patient_id: impl Into<String>, obs_index: usize, n_obs: usize, pred: f64, obs: f64) -> Result<Self> {
        Ok(Self {
            patient_id: patient_id.into(),
            obs_index,
            n_obs,
            pred,
            obs,
            pe_percent: prediction_error(pred, obs)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    /// Median PE, %.
    pub mdpe: f64,
    /// Median |PE|, %.
    pub mdape: f64,
    /// % of records with |PE| ≤ 20.
    pub f20: f64,
    /// % of records with |PE| ≤ 30.
    pub f30: f64,
    pub n_records: usize,
    pub n_patients: usize,
}

/// Median; even lengths average the two central values. `values` must be non-empty.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Summary of a list of prediction errors (percent).
pub fn summarize_errors(pe: &[f64], n_patients: usize) -> Result<MetricsSummary> {
    if pe.is_empty() {
        return Err(Error::Domain("cannot summarize an empty record set".into()));
    }
    let abs: Vec<f64> = pe.iter().map(|v| v.abs()).collect();
    let n = pe.len() as f64;
    let within = |limit: f64| abs.iter().filter(|a| **a <= limit).count() as f64 / n * 100.0;
    Ok(MetricsSummary {
        mdpe: median(pe),
        mdape: median(&abs),
        f20: within(20.0),
        f30: within(30.0),
        n_records: pe.len(),
        n_patients,
    })
}

pub fn summarize(records: &[PredictionRecord]) -> Result<MetricsSummary> {
    let pe: Vec<f64> = records.iter().map(|r| r.pe_percent).collect();
    let patients: BTreeSet<&str> = records.iter().map(|r| r.patient_id.as_str()).collect();
    summarize_errors(&pe, patients.len())
}


#[cfg(test)]
mod props {
    use proptest::prelude::*;

    use super::*;

    fn errors() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(
            prop_oneof![
                -150.0..150.0f64,
                prop::sample::select(vec![-30.0, -20.0, 0.0, 20.0, 30.0]),
            ],
            1..80,
        )
    }

    proptest! {
        #[test]
        fn pe_of_scaled_observation(obs in 0.01..100.0f64, x in -0.99..3.0f64) {
            let pe = prediction_error(obs * (1.0 + x), obs).unwrap();
            prop_assert!((pe - 100.0 * x).abs() <= 1e-9 * (1.0 + (100.0 * x).abs()));
        }

        #[test]
        fn permutation_invariant(pe in errors(), seed in any::<u64>()) {
            let mut shuffled = pe.clone();
            let mut s = seed;
            for i in (1..shuffled.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (s >> 33) as usize % (i + 1));
            }
            prop_assert_eq!(summarize_errors(&pe, 3).unwrap(), summarize_errors(&shuffled, 3).unwrap());
        }

        #[test]
        fn f20_not_above_f30(pe in errors()) {
            let m = summarize_errors(&pe, 1).unwrap();
            prop_assert!(m.f20 <= m.f30);
            prop_assert!(m.mdape >= m.mdpe.abs() - 1e-12 || pe.len() % 2 == 0);
        }
    }
}
