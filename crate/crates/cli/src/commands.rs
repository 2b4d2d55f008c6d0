//! Implementations of the CLI subcommands: thin orchestration over the
//! library pipeline with CSV/JSON interchange.

use std::path::Path;

use extrabound::bounds::{bounds_one_dim, bounds_order_one, bounds_order_one_selected};
use extrabound::forest::{fit_regression_forest, predict_quantile, Forest, ForestParams};
use extrabound::inference::{cv_residual_std, extrapolation_score, prediction_interval};
use extrabound::locpol::{one_dim_derivative_field, order_one_derivative_field};
use extrabound::simlab::{run_replicate, ReplicateConfig};
use extrabound::tuning::tune;
use extrabound::{BoundTable, DerivativeField, SampleSet};
use ndarray::{Array1, Array2};

use crate::config::{ForestConfig, RunConfig, SimConfig};
use crate::csvio::{
    covariate_header, read_pilot, read_targets, read_train, CsvCell, CsvWriter,
};
use crate::errors::{CliError, CliResult};

fn median_of(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Fits the built-in pilot regression forest and writes its predictions at
/// the training points, optionally with quantile columns and a serialized
/// forest file.
pub fn cmd_pilot(
    train: &Path,
    out: &Path,
    forest_out: Option<&Path>,
    quantile_alpha: Option<f64>,
    config: &RunConfig,
    seed: u64,
) -> CliResult<()> {
    let (xs, ys) = read_train(train)?;
    let params = config
        .pilot_forest
        .clone()
        .unwrap_or_default()
        .to_params(seed);
    let forest = fit_regression_forest(&xs, &ys, &params)?;
    let pilot = forest.predict_batch(&xs)?;

    let alpha = quantile_alpha.or(config.alpha);
    let d = xs.ncols();
    let mut header: Vec<String> = covariate_header(d);
    header.push("pilot".into());
    if alpha.is_some() {
        header.push("pilot_qlo".into());
        header.push("pilot_qhi".into());
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut writer = CsvWriter::create(out, &header_refs)?;
    for i in 0..xs.nrows() {
        let mut row: Vec<CsvCell> = (0..d).map(|j| CsvCell::Float(xs[[i, j]])).collect();
        row.push(CsvCell::Float(pilot[i]));
        if let Some(alpha) = alpha {
            let point: Vec<f64> = (0..d).map(|j| xs[[i, j]]).collect();
            row.push(CsvCell::Float(predict_quantile(
                &forest,
                &ys,
                &point,
                alpha / 2.0,
            )?));
            row.push(CsvCell::Float(predict_quantile(
                &forest,
                &ys,
                &point,
                1.0 - alpha / 2.0,
            )?));
        }
        writer.write_row(&row)?;
    }
    writer.finish()?;

    if let Some(path) = forest_out {
        forest.save_to(path)?;
    }
    Ok(())
}

/// Resolves the derivative pipeline parameters: fixed (lambda, forest)
/// when both are configured, otherwise selected by the tuning procedure on
/// the first coordinate direction.
fn resolve_pipeline_params(
    samples: &SampleSet,
    config: &RunConfig,
    seed: u64,
) -> CliResult<(f64, ForestParams)> {
    let forest_cfg = config.forest.clone().unwrap_or_default();
    if let (Some(lambda), true) = (config.lambda, config.forest.is_some()) {
        return Ok((lambda, forest_cfg.to_params(seed)));
    }
    let grid_cfg = config.grid.clone().unwrap_or_default();
    let grid = grid_cfg.to_grid(&forest_cfg, seed)?;
    let v: Vec<f64> = {
        let mut v = vec![0.0; samples.dim()];
        v[0] = 1.0;
        v
    };
    let q = config.q.unwrap_or(1);
    let outcome = tune(samples, &v, q, &grid, seed)?;
    Ok((outcome.penalty, outcome.forest_params))
}

fn compute_bounds(
    samples: &SampleSet,
    targets: &Array2<f64>,
    config: &RunConfig,
    seed: u64,
) -> CliResult<BoundTable> {
    let q = config.q.unwrap_or(1);
    if q == 0 {
        return Err(CliError::Validation("q must be >= 1".into()));
    }
    if q > 1 && samples.dim() != 1 {
        return Err(CliError::Validation(format!(
            "q = {q} requires one-dimensional covariates, data has d = {}",
            samples.dim()
        )));
    }
    let (lambda, params) = resolve_pipeline_params(samples, config, seed)?;
    let table = if q > 1 {
        let derivs = one_dim_derivative_field(samples, q, lambda, &params)?;
        bounds_one_dim(samples, &derivs, targets, q)?
    } else {
        let derivs = order_one_derivative_field(samples, lambda, &params)?;
        match config.anchors {
            Some(k) => bounds_order_one_selected(samples, &derivs, targets, k)?,
            None => bounds_order_one(samples, &derivs, targets, None)?,
        }
    };
    Ok(table)
}

fn write_bounds_csv(out: &Path, table: &BoundTable, d: usize) -> CliResult<()> {
    let mut header: Vec<String> = covariate_header(d);
    header.extend(
        ["lower", "upper", "mid", "width", "clamped"]
            .iter()
            .map(|s| s.to_string()),
    );
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut writer = CsvWriter::create(out, &header_refs)?;
    let mids = table.midpoints();
    let widths = table.widths();
    for t in 0..table.len() {
        let mut row: Vec<CsvCell> = (0..d)
            .map(|j| CsvCell::Float(table.targets[[t, j]]))
            .collect();
        row.push(CsvCell::Float(table.lower[t]));
        row.push(CsvCell::Float(table.upper[t]));
        row.push(CsvCell::Float(mids[t]));
        row.push(CsvCell::Float(widths[t]));
        row.push(CsvCell::Bool(table.clamped[t]));
        writer.write_row(&row)?;
    }
    writer.finish()
}

/// Computes extrapolation bounds at target points from a pilot CSV.
pub fn cmd_bounds(
    pilot: &Path,
    targets: &Path,
    out: &Path,
    config: &RunConfig,
    seed: u64,
) -> CliResult<()> {
    let (xs, pilot_values) = read_pilot(pilot)?;
    let d = xs.ncols();
    let target_matrix = read_targets(targets, d)?;
    let samples = SampleSet::new(xs, pilot_values)?;
    if target_matrix.nrows() == 0 {
        // Empty targets: emit just the header.
        let table = BoundTable {
            targets: target_matrix,
            lower: Array1::zeros(0),
            upper: Array1::zeros(0),
            clamped: Vec::new(),
        };
        return write_bounds_csv(out, &table, d);
    }
    let table = compute_bounds(&samples, &target_matrix, config, seed)?;
    write_bounds_csv(out, &table, d)
}

/// Extrapolation-aware prediction intervals from quantile pilots fitted by
/// the built-in forest.
pub fn cmd_intervals(
    train: &Path,
    targets: &Path,
    out: &Path,
    config: &RunConfig,
    seed: u64,
) -> CliResult<()> {
    let alpha = config.alpha.unwrap_or(0.2);
    let (xs, ys) = read_train(train)?;
    let d = xs.ncols();
    let target_matrix = read_targets(targets, d)?;
    let params = config
        .pilot_forest
        .clone()
        .unwrap_or_default()
        .to_params(seed);
    let forest = fit_regression_forest(&xs, &ys, &params)?;
    let n = xs.nrows();
    let mut lo_pilot = Array1::zeros(n);
    let mut hi_pilot = Array1::zeros(n);
    for i in 0..n {
        let point: Vec<f64> = (0..d).map(|j| xs[[i, j]]).collect();
        lo_pilot[i] = predict_quantile(&forest, &ys, &point, alpha / 2.0)?;
        hi_pilot[i] = predict_quantile(&forest, &ys, &point, 1.0 - alpha / 2.0)?;
    }

    let mut header: Vec<String> = covariate_header(d);
    header.push("lo".into());
    header.push("hi".into());
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut writer = CsvWriter::create(out, &header_refs)?;
    if target_matrix.nrows() > 0 {
        let samples_lo = SampleSet::new(xs.clone(), lo_pilot)?;
        let samples_hi = SampleSet::new(xs.clone(), hi_pilot)?;
        let lo_bounds = compute_bounds(&samples_lo, &target_matrix, config, seed)?;
        let hi_bounds = compute_bounds(&samples_hi, &target_matrix, config, seed)?;
        let (interval, crossings) = prediction_interval(&lo_bounds, &hi_bounds, alpha)?;
        if crossings > 0 {
            eprintln!("note: {crossings} crossing quantile-pilot targets were averaged");
        }
        for t in 0..interval.lo.len() {
            let mut row: Vec<CsvCell> = (0..d)
                .map(|j| CsvCell::Float(target_matrix[[t, j]]))
                .collect();
            row.push(CsvCell::Float(interval.lo[t]));
            row.push(CsvCell::Float(interval.hi[t]));
            writer.write_row(&row)?;
        }
    }
    writer.finish()
}

/// Extrapolation scores at target points: bound width over the residual
/// scale (cross-validated unless supplied).
pub fn cmd_score(
    train: &Path,
    targets: &Path,
    out: &Path,
    config: &RunConfig,
    seed: u64,
) -> CliResult<()> {
    let (xs, ys) = read_train(train)?;
    let d = xs.ncols();
    let target_matrix = read_targets(targets, d)?;
    let params = config
        .pilot_forest
        .clone()
        .unwrap_or_default()
        .to_params(seed);
    let sigma = match config.sigma {
        Some(sigma) => {
            if sigma.is_nan() || sigma <= 0.0 {
                return Err(CliError::Validation(format!(
                    "sigma must be positive, got {sigma}"
                )));
            }
            sigma
        }
        None => {
            let folds = config.folds.unwrap_or(5);
            let inner = params.clone();
            cv_residual_std(
                &xs,
                &ys,
                move |train_x, train_y, test_x| {
                    let forest = fit_regression_forest(train_x, train_y, &inner)?;
                    forest.predict_batch(test_x)
                },
                folds,
                seed,
            )?
            .max(f64::MIN_POSITIVE)
        }
    };

    let mut header: Vec<String> = covariate_header(d);
    header.push("score".into());
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut writer = CsvWriter::create(out, &header_refs)?;
    if target_matrix.nrows() > 0 {
        let forest = fit_regression_forest(&xs, &ys, &params)?;
        let pilot = forest.predict_batch(&xs)?;
        let samples = SampleSet::new(xs, pilot)?;
        let table = compute_bounds(&samples, &target_matrix, config, seed)?;
        let scores = extrapolation_score(&table, sigma)?;
        for t in 0..scores.score.len() {
            let mut row: Vec<CsvCell> = (0..d)
                .map(|j| CsvCell::Float(target_matrix[[t, j]]))
                .collect();
            row.push(CsvCell::Float(scores.score[t]));
            writer.write_row(&row)?;
        }
    }
    writer.finish()
}

/// Runs the fold-based tuning over the configured grid and writes the
/// selected parameters (plus the mean-loss table) as JSON.
pub fn cmd_tune(pilot: &Path, out: &Path, config: &RunConfig, seed: u64) -> CliResult<()> {
    let (xs, pilot_values) = read_pilot(pilot)?;
    let samples = SampleSet::new(xs, pilot_values)?;
    let grid_cfg = config.grid.clone().unwrap_or_default();
    let forest_cfg = config.forest.clone().unwrap_or_default();
    let grid = grid_cfg.to_grid(&forest_cfg, seed)?;
    let q = config.q.unwrap_or(1);
    let mut v = vec![0.0; samples.dim()];
    v[0] = 1.0;
    let outcome = tune(&samples, &v, q, &grid, seed)?;

    let losses: Vec<Vec<f64>> = (0..outcome.mean_losses.nrows())
        .map(|k| outcome.mean_losses.row(k).to_vec())
        .collect();
    let json = serde_json::json!({
        "forest_index": outcome.forest_index,
        "penalty_index": outcome.penalty_index,
        "impurity_tol": outcome.forest_params.impurity_tol,
        "lambda": outcome.penalty,
        "forest_params": outcome.forest_params,
        "mean_losses": losses,
    });
    std::fs::write(out, serde_json::to_string_pretty(&json).unwrap() + "\n")
        .map_err(|e| CliError::Compute(e.to_string()))?;
    Ok(())
}

/// Runs seeded simulation replicates and writes one metrics row per
/// replicate.
pub fn cmd_simulate(
    out: &Path,
    sim: &SimConfig,
    forest: &ForestConfig,
    xtra: &ForestConfig,
    lambda: f64,
    seed: u64,
) -> CliResult<()> {
    let reps = if sim.full { 50 } else { sim.reps };
    let header = [
        "n",
        "d",
        "rep",
        "seed",
        "method",
        "identifiable",
        "rmse_in",
        "rmse_out",
        "wc_rmse_xtra_out",
        "wc_rmse_pilot_out",
        "sigma_cv",
        "score_in_median",
        "score_out_median",
    ];
    let mut writer = CsvWriter::create(out, &header)?;
    for &n in &sim.n {
        for rep in 0..reps {
            let rep_seed = seed
                .wrapping_add((rep as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
                .wrapping_add(n as u64);
            let mut cfg = ReplicateConfig::new(n, sim.d, rep_seed);
            cfg.eval_in = sim.eval_in;
            cfg.eval_out = sim.eval_out;
            cfg.pilot_forest = forest.to_params(rep_seed);
            cfg.xtra_forest = xtra.to_params(rep_seed);
            cfg.lambda = lambda;
            let outcome = run_replicate(&cfg)?;
            let score_in = outcome.score[..outcome.eval_in].to_vec();
            let score_out = outcome.score[outcome.eval_in..].to_vec();
            writer.write_row(&[
                CsvCell::Int(n as i64),
                CsvCell::Int(sim.d as i64),
                CsvCell::Int(rep as i64),
                CsvCell::Int(rep_seed as i64),
                CsvCell::Text("rf".into()),
                CsvCell::Bool(outcome.identifiable),
                CsvCell::Float(outcome.rmse_in),
                CsvCell::Float(outcome.rmse_out),
                CsvCell::Float(outcome.wc_rmse_xtra_out),
                CsvCell::Float(outcome.wc_rmse_pilot_out),
                CsvCell::Float(outcome.sigma_cv),
                CsvCell::Float(median_of(score_in)),
                CsvCell::Float(median_of(score_out)),
            ])?;
        }
    }
    writer.finish()
}

/// Loads a serialized pilot forest and writes predictions at new points
/// (used to reuse pilots across invocations).
pub fn cmd_predict(
    forest_file: &Path,
    targets: &Path,
    out: &Path,
) -> CliResult<()> {
    let forest = Forest::load_from(forest_file)?;
    let target_matrix = read_targets(targets, forest.dim())?;
    let d = forest.dim();
    let mut header: Vec<String> = covariate_header(d);
    header.push("pilot".into());
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut writer = CsvWriter::create(out, &header_refs)?;
    if target_matrix.nrows() > 0 {
        let predictions = forest.predict_batch(&target_matrix)?;
        for t in 0..target_matrix.nrows() {
            let mut row: Vec<CsvCell> = (0..d)
                .map(|j| CsvCell::Float(target_matrix[[t, j]]))
                .collect();
            row.push(CsvCell::Float(predictions[t]));
            writer.write_row(&row)?;
        }
    }
    writer.finish()
}

/// One percentile-bootstrap confidence interval at a single target point,
/// rerunning the full pipeline per resample.
pub fn cmd_confidence(
    train: &Path,
    target: &[f64],
    config: &RunConfig,
    seed: u64,
) -> CliResult<(f64, f64)> {
    let (xs, ys) = read_train(train)?;
    if target.len() != xs.ncols() {
        return Err(CliError::Validation(format!(
            "target has {} coordinates, data has dimension {}",
            target.len(),
            xs.ncols()
        )));
    }
    let alpha = config.alpha.unwrap_or(0.1);
    let replicates = config.replicates.unwrap_or(500);
    let params = config
        .pilot_forest
        .clone()
        .unwrap_or_default()
        .to_params(seed);
    let lambda = config.lambda.unwrap_or(0.0);
    let xtra_params = config.forest.clone().unwrap_or_default().to_params(seed);
    let pipeline = move |x: &Array2<f64>, y: &Array1<f64>, point: &[f64]| {
        let forest = fit_regression_forest(x, y, &params)?;
        let pilot = forest.predict_batch(x)?;
        let samples = SampleSet::new(x.clone(), pilot)?;
        let derivs: DerivativeField =
            order_one_derivative_field(&samples, lambda, &xtra_params)?;
        let targets = Array2::from_shape_vec((1, point.len()), point.to_vec())
            .expect("single target row");
        let table = bounds_order_one(&samples, &derivs, &targets, None)?;
        Ok((table.lower[0], table.upper[0]))
    };
    let interval = extrabound::inference::bootstrap_confidence_interval(
        &xs, &ys, pipeline, target, alpha, replicates, seed,
    )?;
    Ok(interval)
}
