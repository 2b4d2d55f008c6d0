//! Shared quantile conventions.
//!
//! Throughout the crate a quantile is the smallest value whose cumulative
//! mass reaches the requested level.

use crate::error::{Error, Result};

/// Quantile of a weighted empirical distribution: the smallest value whose
/// cumulative (normalized) weight is at least `level`.
pub fn weighted_quantile(values: &[f64], weights: &[f64], level: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("weighted quantile".into()));
    }
    if values.len() != weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} values vs {} weights",
            values.len(),
            weights.len()
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "quantile level must lie in (0, 1), got {level}"
        )));
    }
    let total: f64 = weights.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::EmptyInput("all quantile weights are zero".into()));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut cum = 0.0;
    for &i in &order {
        cum += weights[i] / total;
        if cum >= level {
            return Ok(values[i]);
        }
    }
    // Roundoff can leave cum fractionally below one.
    Ok(values[*order.last().expect("non-empty")])
}

/// Quantile of equally weighted values (mass 1/n each), same convention.
pub fn empirical_quantile(values: &[f64], level: f64) -> Result<f64> {
    let weights = vec![1.0; values.len()];
    weighted_quantile(values, &weights, level)
}
