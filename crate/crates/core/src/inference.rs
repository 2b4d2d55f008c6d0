//! Inference products built on bound tables: worst-case optimal point
//! predictions, extrapolation-aware prediction intervals, percentile
//! bootstrap confidence intervals, cross-validated residual scale and
//! extrapolation scores.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::BoundTable;
use crate::error::{Error, Result};
use crate::stats::empirical_quantile;

/// Prediction or confidence intervals at a set of target points.
#[derive(Debug, Clone)]
pub struct IntervalTable {
    pub targets: Array2<f64>,
    pub lo: Array1<f64>,
    pub hi: Array1<f64>,
    /// Nominal miscoverage level.
    pub alpha: f64,
}

/// Extrapolation scores (bound width over residual scale) at target points.
#[derive(Debug, Clone)]
pub struct ScoreTable {
    pub targets: Array2<f64>,
    pub score: Array1<f64>,
    /// The normalizing residual standard deviation.
    pub sigma: f64,
}

/// The worst-case optimal point prediction: the interval midpoint.
pub fn midpoint_prediction(bounds: &BoundTable) -> Array1<f64> {
    bounds.midpoints()
}

fn check_shared_targets(a: &BoundTable, b: &BoundTable) -> Result<()> {
    if a.targets.shape() != b.targets.shape() || a.targets != b.targets {
        return Err(Error::DimensionMismatch(
            "bound tables do not share targets".into(),
        ));
    }
    Ok(())
}

/// Extrapolation-aware prediction interval: the lower bound of the lower
/// quantile pilot paired with the upper bound of the upper quantile pilot.
///
/// Where crossing quantile pilots make `lo > hi`, both endpoints collapse
/// to their average; the number of such targets is returned alongside.
pub fn prediction_interval(
    lower_quantile_bounds: &BoundTable,
    upper_quantile_bounds: &BoundTable,
    alpha: f64,
) -> Result<(IntervalTable, usize)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    check_shared_targets(lower_quantile_bounds, upper_quantile_bounds)?;
    let m = lower_quantile_bounds.len();
    let mut lo = Array1::zeros(m);
    let mut hi = Array1::zeros(m);
    let mut crossings = 0usize;
    for t in 0..m {
        let l = lower_quantile_bounds.lower[t];
        let h = upper_quantile_bounds.upper[t];
        if l > h {
            let mid = 0.5 * (l + h);
            lo[t] = mid;
            hi[t] = mid;
            crossings += 1;
        } else {
            lo[t] = l;
            hi[t] = h;
        }
    }
    Ok((
        IntervalTable {
            targets: lower_quantile_bounds.targets.clone(),
            lo,
            hi,
            alpha,
        },
        crossings,
    ))
}

/// Percentile-bootstrap confidence interval for the extrapolation bounds
/// at a single target.
///
/// `pipeline` reruns the full bound estimation (pilot fit, derivative
/// estimation, bound assembly) on a resampled dataset and returns the
/// (lower, upper) bound estimates at `target`. The returned interval is
/// the alpha/2 empirical quantile of the lower values and the 1 - alpha/2
/// quantile of the upper values. Failed replicates are dropped; more than
/// 20% failures aborts.
pub fn bootstrap_confidence_interval<F>(
    covariates: &Array2<f64>,
    responses: &Array1<f64>,
    pipeline: F,
    target: &[f64],
    alpha: f64,
    replicates: usize,
    seed: u64,
) -> Result<(f64, f64)>
where
    F: Fn(&Array2<f64>, &Array1<f64>, &[f64]) -> Result<(f64, f64)> + Sync,
{
    if replicates < 2 {
        return Err(Error::InvalidParameter(
            "bootstrap needs at least 2 replicates".into(),
        ));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let n = covariates.nrows();
    if n == 0 || responses.len() != n {
        return Err(Error::DimensionMismatch(
            "covariates/responses shape mismatch".into(),
        ));
    }

    let outcomes: Vec<Option<(f64, f64)>> = (0..replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = replicate_rng(seed, b);
            let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let x = covariates.select(Axis(0), &idx);
            let y = responses.select(Axis(0), &idx);
            pipeline(&x, &y, target).ok()
        })
        .collect();

    let kept: Vec<(f64, f64)> = outcomes.iter().filter_map(|o| *o).collect();
    let failed = replicates - kept.len();
    if (failed as f64) > 0.2 * replicates as f64 {
        return Err(Error::BootstrapFailure {
            failed,
            total: replicates,
        });
    }
    let lowers: Vec<f64> = kept.iter().map(|p| p.0).collect();
    let uppers: Vec<f64> = kept.iter().map(|p| p.1).collect();
    let lo = empirical_quantile(&lowers, alpha / 2.0)?;
    let hi = empirical_quantile(&uppers, 1.0 - alpha / 2.0)?;
    Ok((lo, hi))
}

fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut z = seed ^ (replicate as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

/// Square root of the fold-averaged held-out mean squared error of a pilot
/// fitter; the residual scale used to normalize extrapolation scores.
///
/// `fit_predict` fits on the training block and returns predictions at the
/// evaluation rows.
pub fn cv_residual_std<F>(
    covariates: &Array2<f64>,
    responses: &Array1<f64>,
    fit_predict: F,
    folds: usize,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&Array2<f64>, &Array1<f64>, &Array2<f64>) -> Result<Array1<f64>>,
{
    let n = covariates.nrows();
    if folds < 2 {
        return Err(Error::InvalidParameter("need at least 2 folds".into()));
    }
    if n < folds {
        return Err(Error::InvalidParameter(format!(
            "{n} samples cannot be split into {folds} folds"
        )));
    }
    if responses.len() != n {
        return Err(Error::DimensionMismatch(
            "covariates/responses shape mismatch".into(),
        ));
    }
    let fold_of = crate::tuning::fold_assignment(n, folds, seed);
    let mut fold_mse = Vec::with_capacity(folds);
    for fold in 0..folds {
        let train_idx: Vec<usize> = (0..n).filter(|&i| fold_of[i] != fold).collect();
        let test_idx: Vec<usize> = (0..n).filter(|&i| fold_of[i] == fold).collect();
        if train_idx.is_empty() || test_idx.is_empty() {
            return Err(Error::InvalidParameter("degenerate fold".into()));
        }
        let train_x = covariates.select(Axis(0), &train_idx);
        let train_y = responses.select(Axis(0), &train_idx);
        let test_x = covariates.select(Axis(0), &test_idx);
        let predictions = fit_predict(&train_x, &train_y, &test_x)?;
        if predictions.len() != test_idx.len() {
            return Err(Error::DimensionMismatch(
                "pilot fitter returned wrong number of predictions".into(),
            ));
        }
        let mse = test_idx
            .iter()
            .zip(predictions.iter())
            .map(|(&i, &p)| (responses[i] - p).powi(2))
            .sum::<f64>()
            / test_idx.len() as f64;
        fold_mse.push(mse);
    }
    Ok((fold_mse.iter().sum::<f64>() / folds as f64).sqrt())
}

/// Normalized extrapolation score: bound width divided by the residual
/// standard deviation. A score above one flags extrapolation error that
/// exceeds the noise level.
pub fn extrapolation_score(bounds: &BoundTable, sigma: f64) -> Result<ScoreTable> {
    if sigma.is_nan() || sigma <= 0.0 || sigma.is_infinite() {
        return Err(Error::InvalidParameter(format!(
            "sigma must be positive and finite, got {sigma}"
        )));
    }
    let score = bounds.widths().mapv(|w| w / sigma);
    Ok(ScoreTable {
        targets: bounds.targets.clone(),
        score,
        sigma,
    })
}

/// Summed interval-width score for quantile-pilot bound pairs: the width of
/// the lower-quantile table plus the width of the upper-quantile table at
/// each target.
pub fn interval_width_score(
    lower_quantile_bounds: &BoundTable,
    upper_quantile_bounds: &BoundTable,
) -> Result<Array1<f64>> {
    check_shared_targets(lower_quantile_bounds, upper_quantile_bounds)?;
    Ok(lower_quantile_bounds.widths() + upper_quantile_bounds.widths())
}
