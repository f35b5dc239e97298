//! Evaluation artifacts: per-record errors, per-step summaries, model comparisons and exposure
//! counts, with CSV and JSON writers.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::exposure::{weekly_exposure_report, TargetRange, WeekCounts};
use super::metrics::{summarize, PredictionRecord};
use super::sequential::{forecast_cohort, FlaggedStep, ForecastMode};
use super::verdict::verdict;
use super::wilcoxon::{compare_models, WilcoxonResult, MIN_PAIRS};
use crate::error::Result;
use crate::estimator::PopulationModel;
use crate::pk::EventTimeline;

pub const A_PRIORI: &str = "a priori";
pub const BAYESIAN: &str = "Bayesian";

/// One line of the per-step summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    /// `n_obs` value, or the pooled group name.
    pub group: String,
    pub n_patients: usize,
    pub n_pred: usize,
    pub pred_per_patient_min: usize,
    pub pred_per_patient_max: usize,
    pub mdpe: f64,
    pub mdape: f64,
    pub f20: f64,
    pub f30: f64,
    pub satisfactory: bool,
    /// Failed criteria joined by `;`.
    pub failed: String,
}

fn summary_row(model: &str, group: String, records: &[&PredictionRecord]) -> Result<SummaryRow> {
    let owned: Vec<PredictionRecord> = records.iter().map(|r| (*r).clone()).collect();
    let m = summarize(&owned)?;
    let v = verdict(&m);
    let mut per_patient: HashMap<&str, usize> = HashMap::new();
    for r in records {
        *per_patient.entry(r.patient_id.as_str()).or_default() += 1;
    }
    Ok(SummaryRow {
        model: model.to_string(),
        group,
        n_patients: m.n_patients,
        n_pred: m.n_records,
        pred_per_patient_min: per_patient.values().copied().min().unwrap_or(0),
        pred_per_patient_max: per_patient.values().copied().max().unwrap_or(0),
        mdpe: m.mdpe,
        mdape: m.mdape,
        f20: m.f20,
        f30: m.f30,
        satisfactory: v.satisfactory,
        failed: v.failed_label(),
    })
}

/// One row per distinct `n_obs`, then the pooled a priori and Bayesian rows.
pub fn summary_table(model: &str, records: &[PredictionRecord]) -> Result<Vec<SummaryRow>> {
    let mut by_n: BTreeMap<usize, Vec<&PredictionRecord>> = BTreeMap::new();
    for r in records {
        by_n.entry(r.n_obs).or_default().push(r);
    }
    let mut rows = Vec::new();
    for (n, recs) in &by_n {
        rows.push(summary_row(model, n.to_string(), recs)?);
    }
    let a_priori: Vec<&PredictionRecord> = records.iter().filter(|r| r.n_obs == 0).collect();
    if !a_priori.is_empty() {
        rows.push(summary_row(model, A_PRIORI.into(), &a_priori)?);
    }
    let bayes: Vec<&PredictionRecord> = records.iter().filter(|r| r.n_obs > 0).collect();
    if !bayes.is_empty() {
        rows.push(summary_row(model, BAYESIAN.into(), &bayes)?);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: String,
    pub records: Vec<PredictionRecord>,
    pub flagged: Vec<FlaggedStep>,
    pub summary: Vec<SummaryRow>,
}

/// One-sided test that `model_b` has smaller absolute errors than `model_a` on `group`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub group: String,
    pub model_a: String,
    pub model_b: String,
    pub n_pairs: usize,
    pub result: WilcoxonResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub mode: ForecastMode,
    pub models: Vec<ModelReport>,
    pub comparisons: Vec<ComparisonRow>,
    pub weekly: Vec<WeekCounts>,
}

type RecordKey = (String, usize, usize);

fn paired_errors(a: &[PredictionRecord], b: &[PredictionRecord], bayesian: bool) -> (Vec<f64>, Vec<f64>) {
    let in_group = |r: &&PredictionRecord| (r.n_obs > 0) == bayesian;
    let b_map: HashMap<RecordKey, f64> = b
        .iter()
        .filter(in_group)
        .map(|r| ((r.patient_id.clone(), r.obs_index, r.n_obs), r.pe_percent))
        .collect();
    let mut pa = Vec::new();
    let mut pb = Vec::new();
    for r in a.iter().filter(in_group) {
        if let Some(&pe) = b_map.get(&(r.patient_id.clone(), r.obs_index, r.n_obs)) {
            pa.push(r.pe_percent);
            pb.push(pe);
        }
    }
    (pa, pb)
}

/// Pairwise comparisons (every ordered pair listed first-to-later) on both pooled groups,
/// Bonferroni-adjusted over all tests performed.
pub fn pairwise_comparisons(models: &[ModelReport]) -> Result<Vec<ComparisonRow>> {
    let mut planned = Vec::new();
    for i in 0..models.len() {
        for j in i + 1..models.len() {
            for (group, bayes) in [(A_PRIORI, false), (BAYESIAN, true)] {
                let (pa, pb) = paired_errors(&models[i].records, &models[j].records, bayes);
                if pa.len() >= MIN_PAIRS {
                    planned.push((group, i, j, pa, pb));
                } else if !pa.is_empty() {
                    log::warn!(
                        "skipping {group} comparison of {} vs {}: only {} pairs",
                        models[i].model,
                        models[j].model,
                        pa.len()
                    );
                }
            }
        }
    }
    let n_comparisons = planned.len();
    planned
        .into_iter()
        .map(|(group, i, j, pa, pb)| {
            Ok(ComparisonRow {
                group: group.into(),
                model_a: models[i].model.clone(),
                model_b: models[j].model.clone(),
                n_pairs: pa.len(),
                result: compare_models(&pa, &pb, n_comparisons)?,
            })
        })
        .collect()
}

/// Replays `cohort` under each named model and assembles every artifact.
pub fn evaluate(
    cohort: &[EventTimeline],
    models: &[(String, PopulationModel)],
    mode: ForecastMode,
    target: &TargetRange,
) -> Result<EvaluationReport> {
    target.validate()?;
    let mut reports = Vec::new();
    for (name, model) in models {
        let outcome = forecast_cohort(cohort, model, mode);
        let summary = if outcome.records.is_empty() {
            Vec::new()
        } else {
            summary_table(name, &outcome.records)?
        };
        reports.push(ModelReport {
            model: name.clone(),
            records: outcome.records,
            flagged: outcome.flagged,
            summary,
        });
    }
    let comparisons = pairwise_comparisons(&reports)?;
    Ok(EvaluationReport {
        mode,
        models: reports,
        comparisons,
        weekly: weekly_exposure_report(cohort, target),
    })
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

#[derive(Serialize)]
struct RecordLine<'a> {
    model: &'a str,
    patient_id: &'a str,
    obs_index: usize,
    n_obs: usize,
    pred: f64,
    obs: f64,
    pe_percent: f64,
}

impl EvaluationReport {
    pub fn records_csv(&self) -> Result<String> {
        let mut w = csv_writer();
        for m in &self.models {
            for r in &m.records {
                w.serialize(RecordLine {
                    model: &m.model,
                    patient_id: &r.patient_id,
                    obs_index: r.obs_index,
                    n_obs: r.n_obs,
                    pred: r.pred,
                    obs: r.obs,
                    pe_percent: r.pe_percent,
                })?;
            }
        }
        finish(w)
    }

    pub fn summary_csv(&self) -> Result<String> {
        let mut w = csv_writer();
        for m in &self.models {
            for row in &m.summary {
                w.serialize(row)?;
            }
        }
        finish(w)
    }

    /// PE values grouped by model and `n_obs`, ready for a boxplot.
    pub fn boxplot_csv(&self) -> Result<String> {
        let mut w = csv_writer();
        w.write_record(["model", "group", "n_obs", "pe_percent"])?;
        for m in &self.models {
            let mut recs: Vec<&PredictionRecord> = m.records.iter().collect();
            recs.sort_by_key(|r| r.n_obs);
            for r in recs {
                let group = if r.n_obs == 0 { A_PRIORI } else { BAYESIAN };
                w.write_record([m.model.as_str(), group, &r.n_obs.to_string(), &r.pe_percent.to_string()])?;
            }
        }
        finish(w)
    }

    pub fn comparisons_csv(&self) -> Result<String> {
        let mut w = csv_writer();
        w.write_record([
            "group",
            "model_a",
            "model_b",
            "n_pairs",
            "n_used",
            "w_plus",
            "p_value",
            "p_adjusted",
            "method",
        ])?;
        for c in &self.comparisons {
            let method = serde_json::to_value(c.result.method)?;
            w.write_record([
                c.group.clone(),
                c.model_a.clone(),
                c.model_b.clone(),
                c.n_pairs.to_string(),
                c.result.n_used.to_string(),
                c.result.w_plus.to_string(),
                c.result.p_value.to_string(),
                c.result.p_adjusted.to_string(),
                method.as_str().unwrap_or_default().to_string(),
            ])?;
        }
        finish(w)
    }

    pub fn weekly_csv(&self) -> Result<String> {
        weekly_csv(&self.weekly)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Distinct patients with at least one record under any model.
    pub fn n_patients(&self) -> usize {
        self.models
            .iter()
            .flat_map(|m| m.records.iter().map(|r| r.patient_id.as_str()))
            .collect::<BTreeSet<_>>()
            .len()
    }
}

pub fn weekly_csv(weeks: &[WeekCounts]) -> Result<String> {
    let mut w = csv_writer();
    w.write_record(["week", "below", "within", "above", "total"])?;
    for c in weeks {
        w.write_record([
            c.week.to_string(),
            c.below.to_string(),
            c.within.to_string(),
            c.above.to_string(),
            c.total().to_string(),
        ])?;
    }
    finish(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, idx: usize, n: usize, pe: f64) -> PredictionRecord {
        PredictionRecord::new(id, idx, n, 10.0 * (1.0 + pe / 100.0), 10.0).unwrap()
    }

    #[test]
    fn summary_groups() {
        let records = vec![
            rec("a", 1, 0, -10.0),
            rec("a", 2, 0, 5.0),
            rec("b", 1, 0, 40.0),
            rec("a", 2, 1, 2.0),
            rec("b", 2, 1, -3.0),
        ];
        let rows = summary_table("m", &records).unwrap();
        let groups: Vec<&str> = rows.iter().map(|r| r.group.as_str()).collect();
        assert_eq!(groups, vec!["0", "1", A_PRIORI, BAYESIAN]);
        assert_eq!(rows[0].n_pred, 3);
        assert_eq!(rows[0].pred_per_patient_min, 1);
        assert_eq!(rows[0].pred_per_patient_max, 2);
        assert_eq!(rows[1].n_patients, 2);
        assert_eq!(
            rows[2],
            SummaryRow {
                group: A_PRIORI.into(),
                ..rows[0].clone()
            }
        );
    }

    #[test]
    fn pairing_by_key() {
        let a = vec![rec("a", 1, 0, 1.0), rec("b", 1, 0, 2.0), rec("a", 2, 1, 3.0)];
        let b = vec![rec("b", 1, 0, 4.0), rec("a", 2, 1, 5.0)];
        let (pa, pb) = paired_errors(&a, &b, false);
        assert_eq!(pa.len(), 1);
        assert!((pa[0] - 2.0).abs() < 1e-9 && (pb[0] - 4.0).abs() < 1e-9);
        let (pa, _) = paired_errors(&a, &b, true);
        assert_eq!(pa.len(), 1);
    }

    #[test]
    fn weekly_csv_layout() {
        let csv = weekly_csv(&[WeekCounts {
            week: 1,
            below: 2,
            within: 3,
            above: 0,
        }])
        .unwrap();
        assert_eq!(csv, "week,below,within,above,total\n1,2,3,0,5\n");
    }
}
