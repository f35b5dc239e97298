//! Prior-weight optimization: lowers each prior block's weight as far as the data still
//! support a correct estimation.
//!
//! A refit passes when it converged, its outer Hessian is positive definite (finite condition
//! spread) and every RSE proxy is below the configured ceiling. Blocks are visited in
//! declaration order; for each, the weight walks the grid toward 0 and stops at the first
//! failing weight, keeping the last passing one.

use serde::{Deserialize, Serialize};

use super::fit::{fit_population, FitOptions, FitResult};
use super::model::PopulationModel;
use super::prior::PriorSpec;
use crate::error::{Error, Result};
use crate::pk::EventTimeline;

#[derive(Debug, Clone)]
pub struct WeightSearchOptions {
    /// Maximal accepted relative standard error (0.5 = 50%).
    pub rse_ceiling: f64,
    pub fit: FitOptions,
}

impl Default for WeightSearchOptions {
    fn default() -> Self {
        Self {
            rse_ceiling: 0.5,
            fit: FitOptions::default(),
        }
    }
}

/// One refit of the search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTrial {
    pub block: String,
    pub weight: f64,
    pub passed: bool,
    pub minus2ll: f64,
    pub max_rse: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct WeightSearch {
    pub prior: PriorSpec,
    pub fit: FitResult,
    pub trials: Vec<WeightTrial>,
    pub warnings: Vec<String>,
}

pub fn fit_passes(fit: &FitResult, rse_ceiling: f64) -> bool {
    fit.converged
        && fit
            .condition_report
            .as_ref()
            .is_some_and(|c| c.spread.is_some_and(f64::is_finite))
        && fit.estimates.iter().all(|e| e.rse.is_some_and(|r| r < rse_ceiling))
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.first() != Some(&1.0) {
        return Err(Error::Config("weight grid must start at 1".into()));
    }
    if grid.iter().any(|w| !(0.0..=1.0).contains(w)) {
        return Err(Error::Config("weights must lie in [0, 1]".into()));
    }
    if grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config("weight grid must be strictly descending".into()));
    }
    Ok(())
}

/// Searches per-block prior weights over `grid` (descending, starting at 1).
///
/// `grid = [1]` yields the full-informative fit.
pub fn optimize_prior_weights(
    cohort: &[EventTimeline],
    init: &PopulationModel,
    prior: &PriorSpec,
    grid: &[f64],
    options: &WeightSearchOptions,
) -> Result<WeightSearch> {
    validate_grid(grid)?;
    let mut current = prior.clone().with_all_weights(1.0);
    current.validate()?;
    let mut warnings = Vec::new();
    let mut trials = Vec::new();

    let mut best = fit_population(cohort, init, Some(&current), &options.fit)?;
    let base_passes = fit_passes(&best, options.rse_ceiling);
    trials.push(WeightTrial {
        block: "all".into(),
        weight: 1.0,
        passed: base_passes,
        minus2ll: best.minus2ll(),
        max_rse: best.max_rse(),
    });
    if grid.len() == 1 {
        return Ok(WeightSearch {
            prior: current,
            fit: best,
            trials,
            warnings,
        });
    }
    if !base_passes {
        let msg = "full-informative fit does not pass the estimation check; every block pinned at weight 1".to_string();
        log::warn!("{msg}");
        warnings.push(msg);
        return Ok(WeightSearch {
            prior: current,
            fit: best,
            trials,
            warnings,
        });
    }

    for block in current.blocks() {
        let name = current.block_name(block);
        for &w in &grid[1..] {
            let mut trial = current.clone();
            trial.set_weight(block, w);
            let fit = fit_population(cohort, &best.model, Some(&trial), &options.fit)?;
            let passed = fit_passes(&fit, options.rse_ceiling);
            trials.push(WeightTrial {
                block: name.clone(),
                weight: w,
                passed,
                minus2ll: fit.minus2ll(),
                max_rse: fit.max_rse(),
            });
            if !passed {
                break;
            }
            current = trial;
            best = fit;
        }
        let kept = current.weight(block);
        if kept == 1.0 {
            let msg = format!("prior block {name}: no weight below 1 passes; pinned at 1");
            log::warn!("{msg}");
            warnings.push(msg);
        } else if kept > 0.0 {
            log::info!("prior block {name} kept at weight {kept}");
        }
    }
    Ok(WeightSearch {
        prior: current,
        fit: best,
        trials,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_validation() {
        assert!(validate_grid(&[1.0, 0.5, 0.0]).is_ok());
        assert!(validate_grid(&[1.0]).is_ok());
        assert!(validate_grid(&[0.5, 0.0]).is_err());
        assert!(validate_grid(&[1.0, 1.0]).is_err());
        assert!(validate_grid(&[1.0, 0.5, 0.7]).is_err());
        assert!(validate_grid(&[1.0, -0.5]).is_err());
    }
}
