//! Acceptability criteria: −20 ≤ MDPE ≤ 20, MDAPE ≤ 30, F20 ≥ 35, F30 ≥ 50 (all inclusive).

use std::fmt;

use serde::{Deserialize, Serialize};

use super::metrics::MetricsSummary;

pub const MDPE_LIMIT: f64 = 20.0;
pub const MDAPE_LIMIT: f64 = 30.0;
pub const F20_MIN: f64 = 35.0;
pub const F30_MIN: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Criterion {
    #[serde(rename = "MDPE")]
    Mdpe,
    #[serde(rename = "MDAPE")]
    Mdape,
    #[serde(rename = "F20")]
    F20,
    #[serde(rename = "F30")]
    F30,
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::Mdpe => "MDPE",
            Criterion::Mdape => "MDAPE",
            Criterion::F20 => "F20",
            Criterion::F30 => "F30",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub satisfactory: bool,
    pub failed_criteria: Vec<Criterion>,
}

impl Verdict {
    pub fn failed_label(&self) -> String {
        self.failed_criteria
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(";")
    }
}

/// Checks the four criteria on raw values.
pub fn verdict_from(mdpe: f64, mdape: f64, f20: f64, f30: f64) -> Verdict {
    let mut failed = Vec::new();
    if !(-MDPE_LIMIT..=MDPE_LIMIT).contains(&mdpe) {
        failed.push(Criterion::Mdpe);
    }
    if !(mdape <= MDAPE_LIMIT) {
        failed.push(Criterion::Mdape);
    }
    if !(f20 >= F20_MIN) {
        failed.push(Criterion::F20);
    }
    if !(f30 >= F30_MIN) {
        failed.push(Criterion::F30);
    }
    Verdict {
        satisfactory: failed.is_empty(),
        failed_criteria: failed,
    }
}

pub fn verdict(m: &MetricsSummary) -> Verdict {
    verdict_from(m.mdpe, m.mdape, m.f20, m.f30)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn a_priori_literature_row_fails_everything() {
        let v = verdict_from(-41.0, 45.4, 16.2, 28.6);
        assert!(!v.satisfactory);
        assert_eq!(
            v.failed_criteria,
            vec![Criterion::Mdpe, Criterion::Mdape, Criterion::F20, Criterion::F30]
        );
        assert_eq!(v.failed_label(), "MDPE;MDAPE;F20;F30");
    }

    #[test]
    fn satisfactory_row() {
        assert!(verdict_from(-10.4, 15.2, 54.2, 62.5).satisfactory);
    }

    #[test]
    fn boundaries_inclusive() {
        assert!(verdict_from(20.0, 30.0, 35.0, 50.0).satisfactory);
        assert!(verdict_from(-20.0, 30.0, 35.0, 50.0).satisfactory);
        assert_eq!(
            verdict_from(-20.3, 24.8, 37.5, 58.3).failed_criteria,
            vec![Criterion::Mdpe]
        );
    }
}
