//! Localization metrics: accuracy report and error CDFs.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Accuracy fractions, mean error, and recall over a query set.
/// Accuracies and mean error are computed over yielded fixes only; recall
/// is the fraction of queries that yielded a fix at all.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub acc_5m: f64,
    pub acc_10m: f64,
    pub acc_15m: f64,
    pub mean_error: f64,
    pub recall: f64,
    pub n_queries: usize,
}

/// Build a report from per-query errors (`None` = no fix).
pub fn accuracy_metrics(errors: &[Option<f64>]) -> Result<LocalizationReport> {
    if errors.is_empty() {
        return Err(Error::EmptyInput("per-query errors"));
    }
    let yielded: Vec<f64> = errors.iter().filter_map(|e| *e).collect();
    let recall = yielded.len() as f64 / errors.len() as f64;
    let frac_below = |limit: f64| -> f64 {
        if yielded.is_empty() {
            return 0.0;
        }
        yielded.iter().filter(|e| **e < limit).count() as f64 / yielded.len() as f64
    };
    let mean_error = if yielded.is_empty() {
        0.0
    } else {
        yielded.iter().sum::<f64>() / yielded.len() as f64
    };
    Ok(LocalizationReport {
        acc_5m: frac_below(5.0),
        acc_10m: frac_below(10.0),
        acc_15m: frac_below(15.0),
        mean_error,
        recall,
        n_queries: errors.len(),
    })
}

/// Report from predicted positions and aligned ground truth.
pub fn accuracy_metrics_from_positions(
    predictions: &[Option<(f64, f64)>],
    truth: &[(f64, f64)],
) -> Result<LocalizationReport> {
    if predictions.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            got: predictions.len(),
            expected: truth.len(),
        });
    }
    let errors: Vec<Option<f64>> = predictions
        .iter()
        .zip(truth)
        .map(|(p, t)| p.map(|(x, y)| (x - t.0).hypot(y - t.1)))
        .collect();
    accuracy_metrics(&errors)
}

/// Empirical complementary CDF at 1 m steps:
/// rows of (threshold, fraction of errors >= threshold).
pub fn error_cdf(errors: &[f64]) -> Result<Vec<(u32, f64)>> {
    if errors.is_empty() {
        return Err(Error::EmptyInput("errors"));
    }
    let max = errors.iter().cloned().fold(0.0_f64, f64::max);
    let top = max.ceil() as u32 + 1;
    let n = errors.len() as f64;
    Ok((0..=top)
        .map(|t| {
            let frac = errors.iter().filter(|e| **e >= t as f64).count() as f64 / n;
            (t, frac)
        })
        .collect())
}

/// Median and 90th percentile of a sample (type-7 interpolation).
pub fn median_p90(errors: &[f64]) -> (f64, f64) {
    let mut sorted = errors.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| -> f64 {
        let h = (sorted.len() - 1) as f64 * p;
        let lo = h.floor() as usize;
        let hi = (lo + 1).min(sorted.len() - 1);
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    };
    (q(0.5), q(0.9))
}
