//! Ground-truth simulation engine: random support selection, piecewise
//! linear conditional means with derivative domination by construction,
//! data sampling, oracle bounds and the evaluation metrics.
//!
//! The covariate cube is [-2, 2]^d, split per coordinate into the four
//! unit intervals \[-2,-1), \[-1,0), \[0,1), \[1,2\]. One interval per
//! coordinate is removed from the support; the conditional mean is
//! piecewise linear in the first coordinate with the removed interval's
//! slope copied from an observed one, so the first derivative never takes
//! unobserved values. Slopes and intercepts are rescaled so the mean has
//! unit variance under the uniform distribution on the full cube.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bounds::{bounds_order_one, bounds_order_one_selected};
use crate::data::{BoundTable, DerivativeField, SampleSet};
use crate::error::{Error, Result};
use crate::forest::{fit_regression_forest, ForestParams};
use crate::inference::{cv_residual_std, extrapolation_score, midpoint_prediction};
use crate::locpol::{order_one_derivative_field, rf_loc_pol};
use crate::tuning::{tune, Loss, TuningGrid};

/// Left edges of the four unit intervals; the cube edge is 2.
const BREAKS: [f64; 5] = [-2.0, -1.0, 0.0, 1.0, 2.0];

/// A sampled ground-truth model.
#[derive(Debug, Clone)]
pub struct SimModel {
    d: usize,
    /// Removed interval index (0..4) per coordinate; index 0 drives f.
    removed: Vec<usize>,
    slopes: [f64; 4],
    intercepts: [f64; 4],
    noise_sd: f64,
    /// Variance normalization factor applied to slopes and intercepts.
    scale: f64,
}

impl SimModel {
    /// Builds the model from explicit slopes; intercepts follow from
    /// continuity and f(-2) = 0, the scale from unit variance on the cube.
    pub fn with_slopes(
        d: usize,
        removed: Vec<usize>,
        slopes: [f64; 4],
        noise_sd: f64,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        if removed.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "{} removed intervals for dimension {}",
                removed.len(),
                d
            )));
        }
        if removed.iter().any(|&r| r >= 4) {
            return Err(Error::InvalidParameter(
                "removed interval index must lie in 0..4".into(),
            ));
        }
        if noise_sd.is_nan() || noise_sd < 0.0 {
            return Err(Error::InvalidParameter("noise_sd must be >= 0".into()));
        }
        // Continuity at the breakpoints, anchored at f(-2) = 0.
        let mut intercepts = [0.0; 4];
        intercepts[0] = 2.0 * slopes[0];
        for k in 0..3 {
            let t = BREAKS[k + 1];
            intercepts[k + 1] = intercepts[k] + (slopes[k] - slopes[k + 1]) * t;
        }
        // Closed-form mean and second moment of f(U), U uniform on [-2,2].
        let mut first = 0.0;
        let mut second = 0.0;
        for k in 0..4 {
            let (a, b) = (BREAKS[k], BREAKS[k + 1]);
            let (s, c) = (slopes[k], intercepts[k]);
            first += s * (b * b - a * a) / 2.0 + c * (b - a);
            second += s * s * (b * b * b - a * a * a) / 3.0
                + s * c * (b * b - a * a)
                + c * c * (b - a);
        }
        first /= 4.0;
        second /= 4.0;
        let var = second - first * first;
        let scale = if var > 1e-12 { 1.0 / var.sqrt() } else { 1.0 };
        Ok(Self {
            d,
            removed,
            slopes,
            intercepts,
            noise_sd,
            scale,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn noise_sd(&self) -> f64 {
        self.noise_sd
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn slopes(&self) -> [f64; 4] {
        self.slopes
    }

    pub fn removed(&self) -> &[usize] {
        &self.removed
    }

    /// Slope of f at a first-coordinate value (after scaling).
    pub fn gradient_coordinate_one(&self, x1: f64) -> f64 {
        self.scale * self.slopes[interval_of(x1)]
    }

    /// Whether the conditional mean is identified on the removed region:
    /// the removed first-coordinate interval is inner and carries an
    /// extreme observed slope.
    pub fn is_identifiable(&self) -> bool {
        let j = self.removed[0];
        if j != 1 && j != 2 {
            return false;
        }
        let s = self.slopes[j];
        let min = self.slopes.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = self.slopes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        s == min || s == max
    }

    /// True when the point lies in the observed support (every coordinate
    /// avoids its removed interval).
    pub fn in_support(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(&self.removed)
            .all(|(&xi, &r)| interval_of(xi) != r)
    }
}

/// Index of the unit interval containing `x` (breakpoints belong to the
/// right interval, the cube edge 2 to the last one).
fn interval_of(x: f64) -> usize {
    if x < -1.0 {
        0
    } else if x < 0.0 {
        1
    } else if x < 1.0 {
        2
    } else {
        3
    }
}

/// Draws a random model: removed intervals uniform per coordinate, slopes
/// uniform on [-10, 10] for the observed intervals, the left-out slope
/// copied from a uniformly chosen observed one.
pub fn gen_sim_model(d: usize, seed: u64) -> Result<SimModel> {
    if d == 0 {
        return Err(Error::InvalidParameter("dimension must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let removed: Vec<usize> = (0..d).map(|_| rng.gen_range(0..4usize)).collect();
    let j = removed[0];
    let mut slopes = [0.0; 4];
    for (l, slope) in slopes.iter_mut().enumerate() {
        if l != j {
            *slope = rng.gen_range(-10.0..10.0);
        }
    }
    let observed: Vec<usize> = (0..4).filter(|&l| l != j).collect();
    let j_star = observed[rng.gen_range(0..observed.len())];
    slopes[j] = slopes[j_star];
    SimModel::with_slopes(d, removed, slopes, 0.1)
}

/// Evaluates the (scaled) conditional mean at a point of the cube.
pub fn eval_piecewise_f(model: &SimModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.d {
        return Err(Error::DimensionMismatch(format!(
            "point has {} coordinates, model has dimension {}",
            x.len(),
            model.d
        )));
    }
    if x.iter().any(|&v| !(-2.0..=2.0).contains(&v)) {
        return Err(Error::InvalidParameter(format!(
            "point {x:?} outside the cube [-2, 2]^d"
        )));
    }
    let k = interval_of(x[0]);
    Ok(model.scale * (model.slopes[k] * x[0] + model.intercepts[k]))
}

/// Draws one coordinate uniformly over the retained union (inverse-measure
/// transform over the three retained unit intervals).
fn sample_coordinate(removed: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut u: f64 = rng.gen_range(0.0..3.0);
    for (seg, &left_edge) in BREAKS[..4].iter().enumerate() {
        if seg == removed {
            continue;
        }
        if u < 1.0 {
            return left_edge + u;
        }
        u -= 1.0;
    }
    // Floating point can leave u marginally >= 1.0 on the last segment.
    BREAKS[(0..4).rev().find(|&s| s != removed).unwrap() + 1] - f64::EPSILON
}

/// Samples a dataset: X uniform on the support, Y = f(X) + noise_sd * eps.
pub fn sample_dataset(model: &SimModel, n: usize, seed: u64) -> Result<(Array2<f64>, Array1<f64>)> {
    if n == 0 {
        return Err(Error::InvalidParameter("need n >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Array2::zeros((n, model.d));
    let mut ys = Array1::zeros(n);
    for i in 0..n {
        for j in 0..model.d {
            xs[[i, j]] = sample_coordinate(model.removed[j], &mut rng);
        }
        let f = eval_piecewise_f(model, xs.row(i).as_slice().expect("row view"))?;
        let eps: f64 = rng.sample(StandardNormal);
        ys[i] = f + model.noise_sd * eps;
    }
    Ok((xs, ys))
}

/// Uniform draws from the observed support (no responses).
pub fn sample_in_support(model: &SimModel, m: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Array2::zeros((m, model.d));
    for i in 0..m {
        for j in 0..model.d {
            xs[[i, j]] = sample_coordinate(model.removed[j], &mut rng);
        }
    }
    xs
}

/// Uniform draws from the complement of the support, by rejection on the
/// cube.
pub fn sample_out_support(model: &SimModel, m: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Array2::zeros((m, model.d));
    let mut point = vec![0.0; model.d];
    for i in 0..m {
        loop {
            for v in point.iter_mut() {
                *v = rng.gen_range(-2.0..2.0);
            }
            if !model.in_support(&point) {
                break;
            }
        }
        for j in 0..model.d {
            xs[[i, j]] = point[j];
        }
    }
    xs
}

/// Extrapolation bounds computed from the true function: exact pilot
/// values and exact gradients at the anchors, optimized over the anchors
/// only.
pub fn oracle_bounds(
    model: &SimModel,
    anchors: &Array2<f64>,
    targets: &Array2<f64>,
) -> Result<BoundTable> {
    let n = anchors.nrows();
    let mut pilot = Array1::zeros(n);
    let mut gradients = Array2::zeros((n, model.d));
    for i in 0..n {
        let row = anchors.row(i);
        let x = row.as_slice().expect("row view");
        pilot[i] = eval_piecewise_f(model, x)?;
        gradients[[i, 0]] = model.gradient_coordinate_one(x[0]);
    }
    let samples = SampleSet::new(anchors.clone(), pilot)?;
    let derivs = DerivativeField::order_one(gradients)?;
    bounds_order_one(&samples, &derivs, targets, None)
}

/// Accuracy of estimated bounds against the oracle: RMSE of the lower
/// columns plus RMSE of the upper columns.
pub fn rmse_vs_oracle(estimated: &BoundTable, oracle: &BoundTable) -> Result<f64> {
    if estimated.len() != oracle.len() || estimated.targets != oracle.targets {
        return Err(Error::DimensionMismatch(
            "bound tables do not share targets".into(),
        ));
    }
    let m = estimated.len() as f64;
    let lower_mse = estimated
        .lower
        .iter()
        .zip(oracle.lower.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / m;
    let upper_mse = estimated
        .upper
        .iter()
        .zip(oracle.upper.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / m;
    Ok(lower_mse.sqrt() + upper_mse.sqrt())
}

/// Worst-case RMSE of point predictions: the adversarial conditional mean
/// sits at whichever oracle bound is farther from the prediction, with the
/// noise variance added inside the root.
pub fn worst_case_rmse(
    predictions: &Array1<f64>,
    oracle: &BoundTable,
    noise_sd: f64,
) -> Result<f64> {
    if predictions.len() != oracle.len() {
        return Err(Error::DimensionMismatch(
            "predictions do not match the oracle table".into(),
        ));
    }
    let m = predictions.len() as f64;
    let total: f64 = predictions
        .iter()
        .enumerate()
        .map(|(t, &p)| {
            let up = (oracle.upper[t] - p).powi(2);
            let lo = (oracle.lower[t] - p).powi(2);
            (up.max(lo) + noise_sd * noise_sd).sqrt()
        })
        .sum();
    Ok(total / m)
}

/// Minimal Euclidean distance from `target` to any sample row.
pub fn euclidean_score(samples: &Array2<f64>, target: &[f64]) -> Result<f64> {
    if samples.nrows() == 0 {
        return Err(Error::EmptyInput("euclidean score samples".into()));
    }
    if samples.ncols() != target.len() {
        return Err(Error::DimensionMismatch("target dimension".into()));
    }
    let mut best = f64::INFINITY;
    for i in 0..samples.nrows() {
        let mut s = 0.0;
        for j in 0..target.len() {
            let d = samples[[i, j]] - target[j];
            s += d * d;
        }
        best = best.min(s);
    }
    Ok(best.sqrt())
}

/// Cumulative RMSE curve over score thresholds: for each threshold, the
/// fraction of points with score at or below it and the RMSE of the
/// predictions over exactly those points. Thresholds retaining nothing are
/// omitted.
pub fn cumulative_rmse_curve(
    scores: &[f64],
    predictions: &[f64],
    truth: &[f64],
    thresholds: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let m = scores.len();
    if predictions.len() != m || truth.len() != m {
        return Err(Error::DimensionMismatch(
            "scores, predictions and truth must align".into(),
        ));
    }
    let mut curve = Vec::with_capacity(thresholds.len());
    for &lambda in thresholds {
        let mut count = 0usize;
        let mut sse = 0.0;
        for i in 0..m {
            if scores[i] <= lambda {
                count += 1;
                sse += (predictions[i] - truth[i]).powi(2);
            }
        }
        if count > 0 {
            curve.push((count as f64 / m as f64, (sse / count as f64).sqrt()));
        }
    }
    Ok(curve)
}

/// Configuration of one end-to-end simulation replicate: draw a model,
/// sample data, fit a pilot forest, estimate bounds and compare them to
/// the oracle.
#[derive(Debug, Clone)]
pub struct ReplicateConfig {
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    /// Evaluation points drawn on the support and its complement.
    pub eval_in: usize,
    pub eval_out: usize,
    pub pilot_forest: ForestParams,
    pub xtra_forest: ForestParams,
    pub lambda: f64,
    /// When set, the forest impurity tolerance is selected per direction by
    /// the fold-based tuning over this grid (ordered with decreasing
    /// regularization) before estimating derivatives.
    pub tune_impurity: Option<Vec<f64>>,
    /// Penalty grid for the tuning (strictly decreasing); defaults to the
    /// fixed `lambda` alone.
    pub tune_lambdas: Option<Vec<f64>>,
    /// Per-target anchor subselection count (None uses all samples).
    pub anchors: Option<usize>,
    /// Folds for the residual-scale cross-validation.
    pub cv_folds: usize,
}

impl ReplicateConfig {
    pub fn new(n: usize, d: usize, seed: u64) -> Self {
        Self {
            n,
            d,
            seed,
            eval_in: 200,
            eval_out: 200,
            pilot_forest: ForestParams::default(),
            xtra_forest: ForestParams::default(),
            lambda: 0.0,
            tune_impurity: None,
            tune_lambdas: None,
            anchors: None,
            cv_folds: 5,
        }
    }
}

/// Per-point evaluation data of a replicate, ordered support points first.
#[derive(Debug, Clone)]
pub struct ReplicateOutcome {
    pub identifiable: bool,
    pub noise_sd: f64,
    pub sigma_cv: f64,
    /// Bound accuracy against the oracle, on support and complement.
    pub rmse_in: f64,
    pub rmse_out: f64,
    /// Worst-case RMSE on the complement for the midpoint prediction and
    /// for the raw pilot prediction.
    pub wc_rmse_xtra_out: f64,
    pub wc_rmse_pilot_out: f64,
    /// Number of support evaluation points (prefix of the vectors below).
    pub eval_in: usize,
    pub score: Vec<f64>,
    pub euclidean: Vec<f64>,
    pub prediction: Vec<f64>,
    pub truth: Vec<f64>,
}

fn sub_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 32)).wrapping_mul(0xD6E8_FEB8_6659_FD93);
    z ^ (z >> 32)
}

/// Runs one simulation replicate end to end.
pub fn run_replicate(cfg: &ReplicateConfig) -> Result<ReplicateOutcome> {
    let model = gen_sim_model(cfg.d, sub_seed(cfg.seed, 1))?;
    let (xs, ys) = sample_dataset(&model, cfg.n, sub_seed(cfg.seed, 2))?;
    let eval_in = sample_in_support(&model, cfg.eval_in, sub_seed(cfg.seed, 3));
    let eval_out = sample_out_support(&model, cfg.eval_out, sub_seed(cfg.seed, 4));
    let mut targets = Array2::zeros((cfg.eval_in + cfg.eval_out, cfg.d));
    for t in 0..cfg.eval_in {
        targets.row_mut(t).assign(&eval_in.row(t));
    }
    for t in 0..cfg.eval_out {
        targets.row_mut(cfg.eval_in + t).assign(&eval_out.row(t));
    }

    // Pilot fit and its predictions at the training points.
    let mut pilot_params = cfg.pilot_forest.clone();
    pilot_params.seed = sub_seed(cfg.seed, 5);
    let pilot_forest = fit_regression_forest(&xs, &ys, &pilot_params)?;
    let pilot_at_train = pilot_forest.predict_batch(&xs)?;
    let pilot_at_targets = pilot_forest.predict_batch(&targets)?;

    // Derivative estimation and estimated bounds, with the forest
    // regularization optionally selected per direction by the fold-based
    // tuning rule.
    let samples = SampleSet::new(xs.clone(), pilot_at_train)?;
    let mut xtra_params = cfg.xtra_forest.clone();
    xtra_params.seed = sub_seed(cfg.seed, 6);
    let derivs = match &cfg.tune_impurity {
        None => order_one_derivative_field(&samples, cfg.lambda, &xtra_params)?,
        Some(impurity_grid) => {
            let penalties = cfg
                .tune_lambdas
                .clone()
                .unwrap_or_else(|| vec![cfg.lambda]);
            let mut gradients = Array2::zeros((cfg.n, cfg.d));
            for j in 0..cfg.d {
                let mut v = vec![0.0; cfg.d];
                v[j] = 1.0;
                let mut base = xtra_params.clone();
                base.seed = sub_seed(xtra_params.seed, 100 + j as u64);
                let grid = TuningGrid {
                    forest_params: impurity_grid
                        .iter()
                        .map(|&tol| ForestParams {
                            impurity_tol: tol,
                            ..base.clone()
                        })
                        .collect(),
                    penalties: penalties.clone(),
                    tol: 1.0,
                    folds: 5,
                    loss: Loss::SquaredError,
                };
                let outcome = tune(&samples, &v, 1, &grid, sub_seed(cfg.seed, 200 + j as u64))?;
                let column = rf_loc_pol(
                    &samples,
                    1,
                    &v,
                    1,
                    outcome.penalty,
                    &outcome.forest_params,
                )?;
                gradients.column_mut(j).assign(&column);
            }
            DerivativeField::order_one(gradients)?
        }
    };
    let estimated = match cfg.anchors {
        Some(k) => bounds_order_one_selected(&samples, &derivs, &targets, k)?,
        None => bounds_order_one(&samples, &derivs, &targets, None)?,
    };
    let oracle = oracle_bounds(&model, &xs, &targets)?;

    // Residual scale from a pilot cross-validation.
    let cv_seed = sub_seed(cfg.seed, 7);
    let sigma_cv = cv_residual_std(
        &xs,
        &ys,
        |train_x, train_y, test_x| {
            let forest = fit_regression_forest(train_x, train_y, &pilot_params)?;
            forest.predict_batch(test_x)
        },
        cfg.cv_folds,
        cv_seed,
    )?
    .max(1e-12);

    let split = |table: &BoundTable, lo: usize, hi: usize| BoundTable {
        targets: table.targets.slice(ndarray::s![lo..hi, ..]).to_owned(),
        lower: table.lower.slice(ndarray::s![lo..hi]).to_owned(),
        upper: table.upper.slice(ndarray::s![lo..hi]).to_owned(),
        clamped: table.clamped[lo..hi].to_vec(),
    };
    let m_in = cfg.eval_in;
    let m_all = cfg.eval_in + cfg.eval_out;
    let est_in = split(&estimated, 0, m_in);
    let est_out = split(&estimated, m_in, m_all);
    let ora_in = split(&oracle, 0, m_in);
    let ora_out = split(&oracle, m_in, m_all);

    let prediction = midpoint_prediction(&estimated);
    let truth: Vec<f64> = (0..m_all)
        .map(|t| eval_piecewise_f(&model, targets.row(t).as_slice().expect("row")))
        .collect::<Result<_>>()?;
    let score_table = extrapolation_score(&estimated, sigma_cv)?;
    let euclidean: Vec<f64> = (0..m_all)
        .map(|t| euclidean_score(&xs, targets.row(t).as_slice().expect("row")))
        .collect::<Result<_>>()?;

    Ok(ReplicateOutcome {
        identifiable: model.is_identifiable(),
        noise_sd: model.noise_sd(),
        sigma_cv,
        rmse_in: rmse_vs_oracle(&est_in, &ora_in)?,
        rmse_out: rmse_vs_oracle(&est_out, &ora_out)?,
        wc_rmse_xtra_out: worst_case_rmse(
            &midpoint_prediction(&est_out),
            &ora_out,
            model.noise_sd(),
        )?,
        wc_rmse_pilot_out: worst_case_rmse(
            &pilot_at_targets.slice(ndarray::s![m_in..m_all]).to_owned(),
            &ora_out,
            model.noise_sd(),
        )?,
        eval_in: m_in,
        score: score_table.score.to_vec(),
        euclidean,
        prediction: prediction.to_vec(),
        truth,
    })
}
