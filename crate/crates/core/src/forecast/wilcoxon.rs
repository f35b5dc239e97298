//! One-sided paired Wilcoxon signed-rank comparison of absolute prediction errors.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest number of non-zero pairs handled by the exact null distribution.
pub const EXACT_MAX_N: usize = 25;
pub const MIN_PAIRS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMethod {
    Exact,
    Normal,
    /// Every difference was zero.
    NoEvidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of the ranks of positive differences `|PE_a| − |PE_b|`.
    pub w_plus: f64,
    /// Pairs left after dropping zero differences.
    pub n_used: usize,
    pub p_value: f64,
    pub p_adjusted: f64,
    pub method: WilcoxonMethod,
}

/// Midranks of `values` (1-based), ties sharing the mean of their positions.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        let r = (start + 1 + end) as f64 / 2.0;
        for &k in &idx[start..end] {
            ranks[k] = r;
        }
        start = end;
    }
    ranks
}

/// `P(W+ ≥ w_plus)` under the null by dynamic programming over doubled ranks.
pub fn exact_upper_tail(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let threshold = (2.0 * w_plus).round() as usize;
    let tail: f64 = counts[threshold.min(total + 1)..].iter().sum();
    tail / 2f64.powi(ranks.len() as i32)
}

/// Tests whether model B has smaller absolute errors than model A.
///
/// `p_adjusted = min(1, p · n_comparisons)`.
pub fn compare_models(pe_a: &[f64], pe_b: &[f64], n_comparisons: usize) -> Result<WilcoxonResult> {
    if pe_a.len() != pe_b.len() {
        return Err(Error::Domain(format!(
            "paired vectors differ in length ({} vs {})",
            pe_a.len(),
            pe_b.len()
        )));
    }
    if pe_a.len() < MIN_PAIRS {
        return Err(Error::Domain(format!(
            "at least {MIN_PAIRS} pairs are required, got {}",
            pe_a.len()
        )));
    }
    if n_comparisons == 0 {
        return Err(Error::Config("n_comparisons must be ≥ 1".into()));
    }
    let diffs: Vec<f64> = pe_a
        .iter()
        .zip(pe_b)
        .map(|(a, b)| a.abs() - b.abs())
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    if n == 0 {
        log::warn!("all paired differences are zero; p = 1");
        return Ok(WilcoxonResult {
            w_plus: 0.0,
            n_used: 0,
            p_value: 1.0,
            p_adjusted: 1.0,
            method: WilcoxonMethod::NoEvidence,
        });
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = midranks(&abs);
    let w_plus: f64 = ranks
        .iter()
        .zip(&diffs)
        .filter(|(_, d)| **d > 0.0)
        .map(|(r, _)| r)
        .sum();

    let (p, method) = if n <= EXACT_MAX_N {
        (exact_upper_tail(&ranks, w_plus), WilcoxonMethod::Exact)
    } else {
        (normal_upper_tail(&abs, w_plus), WilcoxonMethod::Normal)
    };
    let p = p.clamp(0.0, 1.0);
    Ok(WilcoxonResult {
        w_plus,
        n_used: n,
        p_value: p,
        p_adjusted: (p * n_comparisons as f64).min(1.0),
        method,
    })
}

fn normal_upper_tail(abs: &[f64], w_plus: f64) -> f64 {
    let n = abs.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut sorted = abs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if !(var > 0.0) {
        return 1.0;
    }
    let z = (w_plus - mean - 0.5) / var.sqrt();
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    1.0 - std.cdf(z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_positive_six() {
        let a = [10.0, 12.0, 15.0, 7.0, 30.0, 22.0];
        let b = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let r = compare_models(&a, &b, 1).unwrap();
        assert_eq!(r.method, WilcoxonMethod::Exact);
        assert!((r.p_value - 1.0 / 64.0).abs() < 1e-15);
        let r3 = compare_models(&a, &b, 3).unwrap();
        assert!((r3.p_adjusted - 3.0 / 64.0).abs() < 1e-15);
    }

    #[test]
    fn identical_inputs() {
        let a = [1.0, -2.0, 3.0, 4.0, 5.0];
        let r = compare_models(&a, &a, 2).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.p_adjusted, 1.0);
        assert_eq!(r.method, WilcoxonMethod::NoEvidence);
    }

    #[test]
    fn sign_of_pe_is_ignored() {
        let a = [-10.0, 12.0, -15.0, 7.0, 30.0];
        let b = [10.0, -12.0, 15.0, -7.0, -30.0];
        assert_eq!(compare_models(&a, &b, 1).unwrap().p_value, 1.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(compare_models(&[1.0; 5], &[1.0; 6], 1), Err(Error::Domain(_))));
        assert!(matches!(compare_models(&[1.0; 4], &[1.0; 4], 1), Err(Error::Domain(_))));
        assert!(compare_models(&[1.0; 5], &[2.0; 5], 0).is_err());
    }

    #[test]
    fn midranks_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn normal_path_close_to_exact_at_boundary() {
        let a: Vec<f64> = (0..30).map(|i| 5.0 + (i as f64 * 0.37).sin() * 4.0 + 0.8).collect();
        let b: Vec<f64> = (0..30).map(|i| 5.0 + (i as f64 * 1.3).cos() * 4.0).collect();
        let r = compare_models(&a, &b, 1).unwrap();
        assert_eq!(r.method, WilcoxonMethod::Normal);
        let abs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x.abs() - y.abs()).abs()).collect();
        let exact = exact_upper_tail(&midranks(&abs), r.w_plus);
        assert!((r.p_value - exact).abs() < 0.02, "{} vs {exact}", r.p_value);
    }
}
