//! The committed fixtures read back through the library and checked against independent
//! counts kept beside them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use tdm_core::data::{load_model_def, parse_dataset, split, summarize_cohort, ModelDefinition, SplitRule, Strictness};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

#[derive(Deserialize)]
struct Counts {
    patients: usize,
    rows: usize,
    doses: usize,
    observations: usize,
    per_patient: BTreeMap<String, PatientCounts>,
}

#[derive(Deserialize, PartialEq, Debug)]
struct PatientCounts {
    doses: usize,
    observations: usize,
}

#[test]
fn dataset_matches_the_recorded_counts() {
    let counts: Counts =
        serde_json::from_str(&std::fs::read_to_string(fixture("synthetic10.counts.json")).unwrap()).unwrap();
    let cohort = parse_dataset(fixture("synthetic10.csv")).unwrap();
    assert_eq!(cohort.len(), counts.patients);
    assert_eq!(cohort.n_observed(), counts.observations);
    let doses: usize = cohort.patients.iter().map(|p| p.doses().count()).sum();
    assert_eq!(doses, counts.doses);
    assert_eq!(
        cohort.patients.iter().map(|p| p.events().len()).sum::<usize>(),
        counts.rows
    );
    for p in &cohort.patients {
        let got = PatientCounts {
            doses: p.doses().count(),
            observations: p.n_observed(),
        };
        assert_eq!(&got, &counts.per_patient[&p.patient_id], "{}", p.patient_id);
    }
    assert!(
        cohort.provenance.warnings.is_empty(),
        "{:?}",
        cohort.provenance.warnings
    );
}

#[test]
fn summary_matches_the_committed_table() {
    let cohort = parse_dataset(fixture("synthetic10.csv")).unwrap();
    let stats = summarize_cohort(&cohort, "synthetic10");
    let mut reader = csv::Reader::from_path(fixture("synthetic10.summary.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), stats.len());
    let num = |s: &str| (!s.is_empty()).then(|| s.parse::<f64>().unwrap());
    let close = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) => (a - b).abs() <= 1e-12 * a.abs().max(1.0),
        (None, None) => true,
        _ => false,
    };
    for (row, stat) in rows.iter().zip(&stats) {
        assert_eq!(&row[0], stat.split);
        assert_eq!(&row[1], stat.variable);
        assert_eq!(row[2].parse::<usize>().unwrap(), stat.n, "{}", stat.variable);
        for (i, v) in [(3, stat.mean), (4, stat.sd), (5, stat.min), (6, stat.max)] {
            assert!(
                close(num(&row[i]), v),
                "{} column {i}: {} vs {v:?}",
                stat.variable,
                &row[i]
            );
        }
    }
}

#[test]
fn reference_definition_round_trips_byte_for_byte() {
    let text = std::fs::read_to_string(fixture("reference-model.json")).unwrap();
    let loaded = load_model_def(fixture("reference-model.json"), Strictness::Strict).unwrap();
    assert!(loaded.warnings.is_empty());
    assert_eq!(loaded.definition.to_json().unwrap(), text);
    let again = ModelDefinition::from_json(&text, Strictness::Strict).unwrap();
    assert_eq!(again.definition, loaded.definition);
}

#[test]
fn fraction_split_takes_the_earliest_transplants() {
    // Transplant dates read straight from the CSV, not through the parser.
    let mut reader = csv::Reader::from_path(fixture("synthetic10.csv")).unwrap();
    let headers = reader.headers().unwrap().clone();
    let id = headers.iter().position(|h| h == "ID").unwrap();
    let tx = headers.iter().position(|h| h == "TXDATE").unwrap();
    let mut dates: BTreeMap<String, String> = BTreeMap::new();
    for r in reader.records() {
        let r = r.unwrap();
        dates.entry(r[id].to_string()).or_insert_with(|| r[tx].to_string());
    }
    let mut ranked: Vec<(String, String)> = dates.into_iter().map(|(i, d)| (d, i)).collect();
    ranked.sort();
    let mut expected: Vec<String> = ranked[..7].iter().map(|(_, i)| i.clone()).collect();
    expected.sort();

    let cohort = parse_dataset(fixture("synthetic10.csv")).unwrap();
    let (est, pred) = split(&cohort, &SplitRule::Fraction(0.7)).unwrap();
    let mut got: Vec<String> = est.ids().into_iter().map(String::from).collect();
    got.sort();
    assert_eq!(got, expected);
    assert_eq!(pred.len(), 3);
}
