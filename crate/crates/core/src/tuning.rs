//! Fold-based hyperparameter selection over (forest parameters, penalty)
//! grids with a most-regularized-within-tolerance rule.
//!
//! For every forest setting the polynomial-split forest is fitted once on
//! the full data and its weight matrix reused across folds; per penalty
//! and fold, the local polynomial is refitted with the held-out columns
//! masked out and the degree-0 coefficient serves as the held-out
//! prediction. The selected cell is the most regularized one whose mean
//! loss is within `tol` standard errors of the best cell.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::SampleSet;
use crate::error::{Error, Result};
use crate::forest::{extract_weights, fit_poly_forest, ForestParams, WeightMatrix};
use crate::locpol::{penalized_locpol, weighted_locpol};

/// Loss applied to held-out local-polynomial predictions against pilot
/// values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Loss {
    SquaredError,
    /// Pinball (quantile) loss at the given level; used when tuning on
    /// quantile pilots.
    Pinball(f64),
}

impl Loss {
    fn eval(&self, predicted: f64, observed: f64) -> f64 {
        match self {
            Loss::SquaredError => (observed - predicted).powi(2),
            Loss::Pinball(alpha) => {
                let diff = observed - predicted;
                if diff >= 0.0 {
                    alpha * diff
                } else {
                    (alpha - 1.0) * diff
                }
            }
        }
    }
}

/// The tuning grid: forest settings ordered with decreasing regularization
/// strength, penalties strictly decreasing.
#[derive(Debug, Clone)]
pub struct TuningGrid {
    pub forest_params: Vec<ForestParams>,
    pub penalties: Vec<f64>,
    pub tol: f64,
    pub folds: usize,
    pub loss: Loss,
}

impl TuningGrid {
    fn validate(&self) -> Result<()> {
        if self.forest_params.is_empty() || self.penalties.is_empty() {
            return Err(Error::EmptyInput("tuning grid".into()));
        }
        if self.penalties.windows(2).any(|p| p[0] <= p[1]) {
            return Err(Error::InvalidParameter(
                "penalties must be strictly decreasing".into(),
            ));
        }
        if self.penalties.iter().any(|p| p.is_nan() || *p < 0.0) {
            return Err(Error::InvalidParameter(
                "penalties must be non-negative".into(),
            ));
        }
        if !self.tol.is_finite() && self.tol != f64::INFINITY {
            return Err(Error::InvalidParameter("tol must not be NaN".into()));
        }
        if self.folds < 2 {
            return Err(Error::InvalidParameter("need at least 2 folds".into()));
        }
        Ok(())
    }
}

/// Result of a tuning run: the chosen cell plus the full mean-loss table.
#[derive(Debug, Clone)]
pub struct TuningOutcome {
    pub forest_index: usize,
    pub penalty_index: usize,
    pub forest_params: ForestParams,
    pub penalty: f64,
    /// Mean held-out loss per (forest setting, penalty) cell.
    pub mean_losses: Array2<f64>,
}

/// Applies the most-regularized-within-tolerance rule to a table of
/// per-sample losses (`losses[k][l][i]`).
///
/// The best cell is the lexicographically smallest argmin of the means;
/// the standard error of a cell is the root mean square of its per-sample
/// loss differences to the best cell, divided by sqrt(n). The selected
/// forest index is the smallest one with some penalty within the band,
/// and the penalty index the smallest admissible one at that forest index.
pub fn select_most_regularized(
    losses: &[Vec<Vec<f64>>],
    tol: f64,
) -> Result<(usize, usize, Array2<f64>)> {
    let k_len = losses.len();
    if k_len == 0 || losses[0].is_empty() {
        return Err(Error::EmptyInput("loss table".into()));
    }
    let l_len = losses[0].len();
    let n = losses[0][0].len();
    if n == 0 {
        return Err(Error::EmptyInput("per-sample losses".into()));
    }

    let mut means = Array2::zeros((k_len, l_len));
    for k in 0..k_len {
        if losses[k].len() != l_len {
            return Err(Error::DimensionMismatch("ragged loss table".into()));
        }
        for l in 0..l_len {
            if losses[k][l].len() != n {
                return Err(Error::DimensionMismatch("ragged loss table".into()));
            }
            means[[k, l]] = losses[k][l].iter().sum::<f64>() / n as f64;
        }
    }

    // Lexicographically smallest argmin of the mean losses.
    let mut best = (0usize, 0usize);
    for k in 0..k_len {
        for l in 0..l_len {
            if means[[k, l]] < means[best] {
                best = (k, l);
            }
        }
    }
    let best_mean = means[best];

    let std_err = |k: usize, l: usize| -> f64 {
        let mut acc = 0.0;
        for (best_loss, loss) in losses[best.0][best.1].iter().zip(&losses[k][l]) {
            let diff = best_loss - loss;
            acc += diff * diff;
        }
        (acc / n as f64).sqrt() / (n as f64).sqrt()
    };
    // A zero standard error means identical per-sample losses, so the band
    // degenerates to equality regardless of tol (this also keeps an
    // infinite tol from producing inf * 0).
    let admissible = |k: usize, l: usize| -> bool {
        let s = std_err(k, l);
        if s == 0.0 {
            means[[k, l]] <= best_mean
        } else {
            means[[k, l]] <= best_mean + tol * s
        }
    };

    let k_star = (0..k_len)
        .find(|&k| (0..l_len).any(|l| admissible(k, l)))
        .expect("best cell is always admissible");
    let l_star = (0..l_len)
        .find(|&l| admissible(k_star, l))
        .expect("admissible penalty exists at k_star");
    Ok((k_star, l_star, means))
}

/// Seeded near-equal fold assignment: `fold_of[i]` in `0..folds`.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut fold_of = vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % folds;
    }
    fold_of
}

/// Runs the full fold-based tuning procedure for direction `v` and order
/// `q`, returning the selected (forest setting, penalty) pair and the
/// mean-loss table. Fold assignment is a seeded permutation.
pub fn tune(
    samples: &SampleSet,
    v: &[f64],
    q: usize,
    grid: &TuningGrid,
    seed: u64,
) -> Result<TuningOutcome> {
    grid.validate()?;
    let n = samples.n();
    if n < grid.folds {
        return Err(Error::InvalidParameter(format!(
            "{} samples cannot be split into {} folds",
            n, grid.folds
        )));
    }
    let fold_of = fold_assignment(n, grid.folds, seed);
    let pilot = samples.pilot();

    let mut losses: Vec<Vec<Vec<f64>>> =
        vec![vec![vec![0.0; n]; grid.penalties.len()]; grid.forest_params.len()];
    for (k, params) in grid.forest_params.iter().enumerate() {
        let forest = fit_poly_forest(samples, v, q, params)?;
        let weights = extract_weights(&forest, samples)?;
        for (l, &lambda) in grid.penalties.iter().enumerate() {
            for fold in 0..grid.folds {
                let predictions =
                    held_out_predictions(samples, &weights, v, q, lambda, &fold_of, fold)?;
                for i in 0..n {
                    if fold_of[i] == fold {
                        losses[k][l][i] = grid.loss.eval(predictions[i], pilot[i]);
                    }
                }
            }
        }
    }

    let (k_star, l_star, means) = select_most_regularized(&losses, grid.tol)?;
    Ok(TuningOutcome {
        forest_index: k_star,
        penalty_index: l_star,
        forest_params: grid.forest_params[k_star].clone(),
        penalty: grid.penalties[l_star],
        mean_losses: means,
    })
}

/// Refits the local polynomial with the held-out columns of the weight
/// matrix masked out and reads the degree-0 coefficient at each held-out
/// point as its prediction.
fn held_out_predictions(
    samples: &SampleSet,
    weights: &WeightMatrix,
    v: &[f64],
    q: usize,
    lambda: f64,
    fold_of: &[usize],
    fold: usize,
) -> Result<Vec<f64>> {
    let n = samples.n();
    let mut masked = weights.entries().clone();
    for (l, &assignment) in fold_of.iter().enumerate() {
        if assignment == fold {
            masked.column_mut(l).fill(0.0);
        }
    }
    // A row whose entire mass sat on the held-out fold would make the fit
    // undefined; give it uniform weight over the retained columns instead.
    let retained: Vec<usize> = (0..n).filter(|&l| fold_of[l] != fold).collect();
    for i in 0..n {
        if masked.row(i).sum() == 0.0 {
            let share = 1.0 / retained.len() as f64;
            for &l in &retained {
                masked[[i, l]] = share;
            }
        }
    }
    let masked = WeightMatrix::from_entries(masked)?;
    let coef = if lambda > 0.0 {
        penalized_locpol(samples, &masked, v, q, lambda)?
    } else {
        weighted_locpol(samples, &masked, v, q)?
    };
    Ok(coef.beta().column(0).to_vec())
}
