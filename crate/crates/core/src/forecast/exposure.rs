//! Target trough bands and the weekly exposure distribution.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pk::EventTimeline;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub low: f64,
    pub high: f64,
}

impl Band {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.low + self.high)
    }

    pub fn classify(&self, conc: f64) -> Exposure {
        if conc < self.low {
            Exposure::Below
        } else if conc > self.high {
            Exposure::Above
        } else {
            Exposure::Within
        }
    }
}

/// Trough targets: `early` up to and including `pod_cutoff`, `late` afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetRange {
    pub pod_cutoff: u32,
    pub early: Band,
    pub late: Band,
}

impl Default for TargetRange {
    fn default() -> Self {
        Self {
            pod_cutoff: 28,
            early: Band { low: 8.0, high: 12.0 },
            late: Band { low: 5.0, high: 10.0 },
        }
    }
}

impl TargetRange {
    pub fn validate(&self) -> Result<()> {
        if self.pod_cutoff == 0 {
            return Err(Error::Config("target pod_cutoff must be > 0".into()));
        }
        for (name, b) in [("early", self.early), ("late", self.late)] {
            if !(b.low > 0.0 && b.low <= b.high && b.high.is_finite()) {
                return Err(Error::Config(format!("target band {name} must satisfy 0 < low ≤ high")));
            }
        }
        Ok(())
    }

    pub fn band_at(&self, pod: u32) -> Band {
        if pod <= self.pod_cutoff {
            self.early
        } else {
            self.late
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exposure {
    Below,
    Within,
    Above,
}

/// Week 1 covers POD 1–7.
pub fn week_of(pod: u32) -> u32 {
    pod.div_ceil(7)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeekCounts {
    pub week: u32,
    pub below: usize,
    pub within: usize,
    pub above: usize,
}

impl WeekCounts {
    pub fn total(&self) -> usize {
        self.below + self.within + self.above
    }
}

/// Counts every non-missing observation per week against its POD's target band.
pub fn weekly_exposure_report(cohort: &[EventTimeline], target: &TargetRange) -> Vec<WeekCounts> {
    let mut weeks: BTreeMap<u32, WeekCounts> = BTreeMap::new();
    for tl in cohort {
        for (t, v) in tl.observed() {
            let pod = tl.pod_at(t).max(1) as u32;
            let week = week_of(pod);
            let entry = weeks.entry(week).or_insert(WeekCounts {
                week,
                below: 0,
                within: 0,
                above: 0,
            });
            match target.band_at(pod).classify(v) {
                Exposure::Below => entry.below += 1,
                Exposure::Within => entry.within += 1,
                Exposure::Above => entry.above += 1,
            }
        }
    }
    weeks.into_values().collect()
}
