//! Random forests with a polynomial splitting rule, plus the locality
//! weights they induce.
//!
//! Two flavors share the tree machinery: `fit_poly_forest` scores each
//! candidate split by the residual sum of squares of degree-(q+1) fits in
//! a fixed projection on both children; `fit_regression_forest` is the
//! degree-0 special case (variance reduction) used for pilot predictions.

mod polyfit;
mod tree;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SampleSet;
use crate::error::{Error, Result};
use crate::stats::weighted_quantile;

pub use polyfit::MAX_FIT_DEGREE;

use polyfit::PowerSums;
use tree::{GrowContext, Tree};

/// Forest hyperparameters; the seed fully determines the fitted forest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    /// Number of trees M.
    pub n_trees: usize,
    /// Depth cap; `None` grows until leaves are pure or too small.
    pub max_depth: Option<usize>,
    /// Minimum samples per child.
    pub min_samples_leaf: usize,
    /// Minimum impurity decrease for a split to be accepted.
    pub impurity_tol: f64,
    /// Coordinates tried per split; `None` tries all.
    pub mtry: Option<usize>,
    /// Bootstrap resampling (with replacement, bag size n) per tree.
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_samples_leaf: 5,
            impurity_tol: 0.0,
            mtry: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestParams {
    fn validate(&self, d: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidParameter("n_trees must be >= 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::InvalidParameter(
                "min_samples_leaf must be >= 1".into(),
            ));
        }
        if self.impurity_tol.is_nan() || self.impurity_tol < 0.0 {
            return Err(Error::InvalidParameter(
                "impurity_tol must be non-negative".into(),
            ));
        }
        if let Some(m) = self.mtry {
            if m == 0 || m > d {
                return Err(Error::InvalidParameter(format!(
                    "mtry must be in 1..={d}, got {m}"
                )));
            }
        }
        if self.max_depth == Some(0) {
            return Err(Error::InvalidParameter("max_depth must be >= 1".into()));
        }
        Ok(())
    }
}

/// n x n locality weights; entry (i, l) is the weight sample i receives
/// when the forest is evaluated at sample l.
#[derive(Debug, Clone)]
pub struct WeightMatrix(Array2<f64>);

impl WeightMatrix {
    /// Wraps an externally constructed weight matrix (must be square with
    /// finite non-negative entries). Local polynomial fits accept any such
    /// matrix; forests are just one way to produce one.
    pub fn from_entries(entries: Array2<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "weight matrix must be square, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::NonFinite(
                "weight entries must be finite and non-negative".into(),
            ));
        }
        Ok(Self(entries))
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    /// Sum over i of the weights at each evaluation point; 1 up to roundoff.
    pub fn column_sums(&self) -> Array1<f64> {
        self.0.sum_axis(ndarray::Axis(0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum SplitRule {
    /// Degree-(q+1) polynomial fits in the projection direction.
    Polynomial { direction: Vec<f64>, order: usize },
    /// Mean fits (classic variance-reduction regression splits).
    Mean,
}

/// A fitted forest: tree topology plus per-leaf training index sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    params: ForestParams,
    rule: SplitRule,
    n_samples: usize,
    dim: usize,
    trees: Vec<Tree>,
}

/// File wrapper so serialized forests are self-describing and versioned.
#[derive(Serialize, Deserialize)]
struct ForestFile {
    format: String,
    version: u32,
    forest: Forest,
}

const FOREST_FORMAT: &str = "extrabound-forest";
const FOREST_VERSION: u32 = 1;

impl Forest {
    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Mean prediction at a point: average of the per-tree leaf means.
    pub fn predict(&self, point: &[f64]) -> f64 {
        let mut acc = 0.0;
        for tree in &self.trees {
            let (_, value) = tree.leaf(tree.leaf_id(point));
            acc += value;
        }
        acc / self.trees.len() as f64
    }

    /// Mean predictions for every row of `points`.
    pub fn predict_batch(&self, points: &Array2<f64>) -> Result<Array1<f64>> {
        if points.ncols() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "points have {} columns, forest expects {}",
                points.ncols(),
                self.dim
            )));
        }
        let rows: Vec<f64> = (0..points.nrows())
            .into_par_iter()
            .map(|r| self.predict(points.row(r).as_slice().expect("row view")))
            .collect();
        Ok(Array1::from_vec(rows))
    }

    /// Out-of-bag prediction per training row; `None` when a row was in-bag
    /// in every tree.
    pub fn oob_predictions(&self, covariates: &Array2<f64>) -> Result<Vec<Option<f64>>> {
        if covariates.nrows() != self.n_samples || covariates.ncols() != self.dim {
            return Err(Error::DimensionMismatch(
                "covariates do not match the training shape".into(),
            ));
        }
        Ok((0..self.n_samples)
            .into_par_iter()
            .map(|i| {
                let row = covariates.row(i);
                let point = row.as_slice().expect("row view");
                let mut acc = 0.0;
                let mut count = 0usize;
                for tree in &self.trees {
                    if !tree.in_bag[i] {
                        let (_, value) = tree.leaf(tree.leaf_id(point));
                        acc += value;
                        count += 1;
                    }
                }
                (count > 0).then(|| acc / count as f64)
            })
            .collect())
    }

    /// Locality weights of the training samples at an arbitrary point:
    /// (1/M) * sum over trees of 1(i in leaf(x)) / |leaf(x)|.
    pub fn weights_at(&self, point: &[f64]) -> Vec<f64> {
        let mut w = vec![0.0; self.n_samples];
        for tree in &self.trees {
            let (indices, _) = tree.leaf(tree.leaf_id(point));
            let share = 1.0 / indices.len() as f64;
            for &i in indices {
                w[i as usize] += share;
            }
        }
        let m = self.trees.len() as f64;
        for v in &mut w {
            *v /= m;
        }
        w
    }

    pub fn save_to(&self, path: &std::path::Path) -> Result<()> {
        let file = ForestFile {
            format: FOREST_FORMAT.to_string(),
            version: FOREST_VERSION,
            forest: self.clone(),
        };
        let json = serde_json::to_string(&file)
            .map_err(|e| Error::Serialization(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn load_from(path: &std::path::Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Serialization(e.to_string()))?;
        let file: ForestFile =
            serde_json::from_str(&text).map_err(|e| Error::Serialization(e.to_string()))?;
        if file.format != FOREST_FORMAT {
            return Err(Error::Serialization(format!(
                "unexpected format marker {:?}",
                file.format
            )));
        }
        if file.version != FOREST_VERSION {
            return Err(Error::Serialization(format!(
                "unsupported forest file version {}",
                file.version
            )));
        }
        Ok(file.forest)
    }
}

/// Deterministic per-tree RNG stream (splitmix64 over seed and tree index).
fn tree_rng(seed: u64, tree_idx: usize) -> ChaCha8Rng {
    let mut z = seed ^ (tree_idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

fn grow_forest(
    covariates: &Array2<f64>,
    y: &Array1<f64>,
    rule: SplitRule,
    params: &ForestParams,
) -> Result<Forest> {
    let n = covariates.nrows();
    let d = covariates.ncols();
    if n == 0 {
        return Err(Error::EmptyInput("forest training data".into()));
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} fit targets for {} samples",
            y.len(),
            n
        )));
    }
    params.validate(d)?;

    let xs = covariates.as_standard_layout().into_owned();
    let xs_slice = xs.as_slice().expect("standard layout").to_vec();
    let y_slice = y.to_vec();
    let (t, degree) = match &rule {
        SplitRule::Polynomial { direction, order } => {
            let degree = order + 1;
            if degree > MAX_FIT_DEGREE {
                return Err(Error::InvalidParameter(format!(
                    "order {} needs fit degree {}, cap is {}",
                    order, degree, MAX_FIT_DEGREE
                )));
            }
            let t: Vec<f64> = (0..n)
                .map(|i| {
                    direction
                        .iter()
                        .enumerate()
                        .map(|(j, v)| v * xs_slice[i * d + j])
                        .sum()
                })
                .collect();
            (t, degree)
        }
        SplitRule::Mean => (vec![0.0; n], 0),
    };

    let ctx = GrowContext {
        xs: &xs_slice,
        n,
        d,
        y: &y_slice,
        t: &t,
        degree,
        params,
    };
    let trees: Vec<Tree> = (0..params.n_trees)
        .into_par_iter()
        .map(|k| {
            let mut rng = tree_rng(params.seed, k);
            Tree::grow(&ctx, &mut rng)
        })
        .collect();

    Ok(Forest {
        params: params.clone(),
        rule,
        n_samples: n,
        dim: d,
        trees,
    })
}

/// Fits a forest whose splits minimize the summed residual sums of squares
/// of degree-(q+1) polynomial fits in `v^T x` on both children.
pub fn fit_poly_forest(
    samples: &SampleSet,
    v: &[f64],
    q: usize,
    params: &ForestParams,
) -> Result<Forest> {
    if v.len() != samples.dim() {
        return Err(Error::DimensionMismatch(format!(
            "direction has {} coordinates, samples have dimension {}",
            v.len(),
            samples.dim()
        )));
    }
    let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm.is_nan() || norm <= 0.0 {
        return Err(Error::InvalidParameter("direction must be nonzero".into()));
    }
    if q < 1 {
        return Err(Error::InvalidParameter("order q must be >= 1".into()));
    }
    grow_forest(
        samples.covariates(),
        samples.pilot(),
        SplitRule::Polynomial {
            direction: v.to_vec(),
            order: q,
        },
        params,
    )
}

/// Standard regression forest (variance-reduction splits, mean leaves).
pub fn fit_regression_forest(
    covariates: &Array2<f64>,
    responses: &Array1<f64>,
    params: &ForestParams,
) -> Result<Forest> {
    if covariates.iter().any(|v| !v.is_finite()) || responses.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("forest training data".into()));
    }
    grow_forest(covariates, responses, SplitRule::Mean, params)
}

/// Impurity of a proposed split: sum of the two child residual sums of
/// squares under degree-(q+1) fits of the pilot on powers of `v^T x`.
///
/// A child whose design cannot support the full degree (too few points or
/// too few distinct projections) falls back to lower degrees down to the
/// mean fit.
pub fn split_impurity(
    samples: &SampleSet,
    child_left: &[usize],
    child_right: &[usize],
    v: &[f64],
    q: usize,
) -> Result<f64> {
    if child_left.is_empty() || child_right.is_empty() {
        return Err(Error::EmptyInput("split child".into()));
    }
    if v.len() != samples.dim() {
        return Err(Error::DimensionMismatch("direction length".into()));
    }
    let degree = q + 1;
    if degree > MAX_FIT_DEGREE {
        return Err(Error::InvalidParameter(format!(
            "order {q} needs fit degree {degree}, cap is {MAX_FIT_DEGREE}"
        )));
    }
    let mut total = 0.0;
    for child in [child_left, child_right] {
        let mut ts: Vec<f64> = Vec::with_capacity(child.len());
        for &i in child {
            if i >= samples.n() {
                return Err(Error::InvalidParameter(format!(
                    "child index {i} out of range"
                )));
            }
            let row = samples.covariates().row(i);
            ts.push(row.iter().zip(v).map(|(x, w)| x * w).sum());
        }
        let lo = ts.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ts.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let shift = 0.5 * (hi + lo);
        let scale = if hi > lo { 0.5 * (hi - lo) } else { 1.0 };
        let mut stats = PowerSums::new(degree);
        for (&i, &t) in child.iter().zip(&ts) {
            stats.add((t - shift) / scale, samples.pilot()[i]);
        }
        total += stats.rss();
    }
    Ok(total)
}

/// Evaluates the forest weights at every training sample, producing the
/// n x n matrix with entry (i, l) = weight of sample i at sample l.
pub fn extract_weights(forest: &Forest, samples: &SampleSet) -> Result<WeightMatrix> {
    if samples.n() != forest.n_samples || samples.dim() != forest.dim {
        return Err(Error::DimensionMismatch(
            "weight extraction needs the training samples the forest was fitted on".into(),
        ));
    }
    let n = samples.n();
    let xs = samples.covariates().as_standard_layout().into_owned();
    let xs_slice = xs.as_slice().expect("standard layout");
    let d = forest.dim;
    let columns: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|l| forest.weights_at(&xs_slice[l * d..(l + 1) * d]))
        .collect();
    let mut entries = Array2::zeros((n, n));
    for (l, col) in columns.iter().enumerate() {
        for (i, &w) in col.iter().enumerate() {
            entries[[i, l]] = w;
        }
    }
    Ok(WeightMatrix(entries))
}

/// Quantile of the weighted empirical response distribution at `point`:
/// the smallest response whose cumulative weight reaches `alpha`.
pub fn predict_quantile(
    forest: &Forest,
    responses: &Array1<f64>,
    point: &[f64],
    alpha: f64,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "quantile level must lie in (0, 1), got {alpha}"
        )));
    }
    if responses.len() != forest.n_samples {
        return Err(Error::DimensionMismatch(format!(
            "{} responses for a forest trained on {} samples",
            responses.len(),
            forest.n_samples
        )));
    }
    if point.len() != forest.dim {
        return Err(Error::DimensionMismatch("query point dimension".into()));
    }
    let weights = forest.weights_at(point);
    let values: Vec<f64> = responses.to_vec();
    weighted_quantile(&values, &weights, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::{arr1, arr2, Array1, Array2};
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    fn line_samples(n: usize) -> SampleSet {
        let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let pilot: Vec<f64> = xs.iter().map(|&x| 2.0 * x + 1.0).collect();
        SampleSet::new(
            Array2::from_shape_vec((n, 1), xs).unwrap(),
            Array1::from_vec(pilot),
        )
        .unwrap()
    }

    fn no_bootstrap(seed: u64) -> ForestParams {
        ForestParams {
            n_trees: 3,
            min_samples_leaf: 2,
            bootstrap: false,
            seed,
            ..ForestParams::default()
        }
    }

    #[test]
    fn split_impurity_matches_hand_cases() {
        // Constant child contributes zero; both children singletons -> 0.
        let samples = SampleSet::new(
            arr2(&[[0.0], [1.0], [2.0], [3.0]]),
            arr1(&[5.0, 5.0, 1.0, 2.0]),
        )
        .unwrap();
        let imp = split_impurity(&samples, &[0, 1], &[2, 3], &[1.0], 1).unwrap();
        // Left constant -> 0. Right has two points -> interpolated -> 0.
        assert_relative_eq!(imp, 0.0, epsilon = 1e-10);

        let imp = split_impurity(&samples, &[0], &[2], &[1.0], 1).unwrap();
        assert_relative_eq!(imp, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn split_impurity_quadratic_through_three_points() {
        let samples = SampleSet::new(
            arr2(&[[0.0], [1.0], [2.0], [5.0], [6.0]]),
            arr1(&[0.0, 1.0, 4.0, 0.0, 0.0]),
        )
        .unwrap();
        // Left child is y = x^2 on three points: a degree-2 fit interpolates.
        let imp = split_impurity(&samples, &[0, 1, 2], &[3, 4], &[1.0], 1).unwrap();
        assert_relative_eq!(imp, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn split_impurity_rejects_empty_child() {
        let samples = line_samples(4);
        assert!(split_impurity(&samples, &[], &[0], &[1.0], 1).is_err());
    }

    #[test]
    fn poly_forest_on_exact_polynomial_stays_single_leaf() {
        let samples = line_samples(30);
        let params = ForestParams {
            impurity_tol: 1e-9,
            ..no_bootstrap(3)
        };
        let forest = fit_poly_forest(&samples, &[1.0], 1, &params).unwrap();
        for k in 0..forest.n_trees() {
            assert_eq!(forest.trees[k].nodes.len(), 1);
        }
    }

    #[test]
    fn poly_forest_rejects_zero_direction() {
        let samples = line_samples(10);
        assert!(fit_poly_forest(&samples, &[0.0], 1, &no_bootstrap(0)).is_err());
    }

    #[test]
    fn kink_split_lands_between_straddling_samples() {
        // Piecewise-linear pilot with a kink at zero; enumerate every
        // midpoint threshold with an independent least-squares oracle and
        // check the grown root split matches the oracle argmin.
        let n = 24;
        let xs: Vec<f64> = (0..n).map(|i| -1.05 + 2.1 * i as f64 / (n - 1) as f64).collect();
        let pilot: Vec<f64> = xs.iter().map(|&x| x.abs()).collect();
        let samples = SampleSet::new(
            Array2::from_shape_vec((n, 1), xs.clone()).unwrap(),
            Array1::from_vec(pilot.clone()),
        )
        .unwrap();
        let params = ForestParams {
            n_trees: 1,
            min_samples_leaf: 3,
            bootstrap: false,
            seed: 11,
            ..ForestParams::default()
        };
        let forest = fit_poly_forest(&samples, &[1.0], 1, &params).unwrap();
        let root = &forest.trees[0].nodes[0];
        let threshold = match root {
            tree::Node::Internal { threshold, .. } => *threshold,
            tree::Node::Leaf { .. } => panic!("root should split"),
        };

        // Oracle: dense quadratic least squares per side for every midpoint.
        let mut best = (f64::INFINITY, f64::NAN);
        for pos in 2..n - 3 {
            let thr = 0.5 * (xs[pos] + xs[pos + 1]);
            let left: Vec<usize> = (0..=pos).collect();
            let right: Vec<usize> = (pos + 1..n).collect();
            if left.len() < 3 || right.len() < 3 {
                continue;
            }
            let rss = dense_poly_rss(&xs, &pilot, &left, 2) + dense_poly_rss(&xs, &pilot, &right, 2);
            if rss < best.0 {
                best = (rss, thr);
            }
        }
        assert_relative_eq!(threshold, best.1, epsilon = 1e-12);
        // The straddling pair around the kink.
        let below = xs.iter().cloned().filter(|&x| x < 0.0).fold(f64::NEG_INFINITY, f64::max);
        let above = xs.iter().cloned().filter(|&x| x >= 0.0).fold(f64::INFINITY, f64::min);
        assert!(threshold > below && threshold < above);
    }

    fn dense_poly_rss(xs: &[f64], ys: &[f64], idx: &[usize], degree: usize) -> f64 {
        let rows = idx.len();
        let cols = degree + 1;
        let mut a = nalgebra::DMatrix::zeros(rows, cols);
        let mut b = nalgebra::DVector::zeros(rows);
        for (r, &i) in idx.iter().enumerate() {
            let mut p = 1.0;
            for c in 0..cols {
                a[(r, c)] = p;
                p *= xs[i];
            }
            b[r] = ys[i];
        }
        let beta = (a.transpose() * &a)
            .cholesky()
            .map(|ch| ch.solve(&(a.transpose() * &b)))
            .unwrap_or_else(|| nalgebra::DVector::zeros(cols));
        (a * beta - b).norm_squared()
    }

    #[test]
    fn regression_forest_constant_responses() {
        let covariates = arr2(&[[0.0], [1.0], [2.0], [3.0]]);
        let responses = arr1(&[4.0, 4.0, 4.0, 4.0]);
        let forest = fit_regression_forest(&covariates, &responses, &no_bootstrap(5)).unwrap();
        assert_relative_eq!(forest.predict(&[1.5]), 4.0);
        assert_relative_eq!(forest.predict(&[99.0]), 4.0);
    }

    #[test]
    fn regression_forest_single_sample() {
        let forest = fit_regression_forest(
            &arr2(&[[0.0]]),
            &arr1(&[7.0]),
            &ForestParams {
                n_trees: 2,
                bootstrap: false,
                ..ForestParams::default()
            },
        )
        .unwrap();
        assert_relative_eq!(forest.predict(&[-3.0]), 7.0);
    }

    #[test]
    fn regression_forest_rejects_empty() {
        let res = fit_regression_forest(
            &Array2::zeros((0, 1)),
            &Array1::zeros(0),
            &ForestParams::default(),
        );
        assert!(res.is_err());
    }

    #[test]
    fn weight_matrix_uniform_for_single_leaf() {
        let samples = line_samples(6);
        let params = ForestParams {
            impurity_tol: f64::INFINITY,
            n_trees: 4,
            bootstrap: false,
            seed: 9,
            ..ForestParams::default()
        };
        let forest = fit_poly_forest(&samples, &[1.0], 1, &params).unwrap();
        let weights = extract_weights(&forest, &samples).unwrap();
        // Accumulated exactly as the implementation does: M shares of 1/n.
        let mut expected = 0.0;
        for _ in 0..4 {
            expected += 1.0 / 6.0;
        }
        expected /= 4.0;
        for w in weights.entries() {
            assert_eq!(*w, expected);
        }
    }

    #[test]
    fn weight_columns_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 40;
        let xs: Vec<f64> = (0..n * 2).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let pilot: Vec<f64> = (0..n).map(|i| (xs[2 * i] - xs[2 * i + 1]).sin()).collect();
        let samples = SampleSet::new(
            Array2::from_shape_vec((n, 2), xs).unwrap(),
            Array1::from_vec(pilot),
        )
        .unwrap();
        let params = ForestParams {
            n_trees: 20,
            min_samples_leaf: 3,
            bootstrap: true,
            seed: 4,
            ..ForestParams::default()
        };
        let forest = fit_poly_forest(&samples, &[1.0, 0.0], 1, &params).unwrap();
        let weights = extract_weights(&forest, &samples).unwrap();
        for s in weights.column_sums() {
            assert_relative_eq!(s, 1.0, epsilon = 1e-9);
        }
        assert!(weights.entries().iter().all(|&w| (0.0..=1.0).contains(&w)));
    }

    #[test]
    fn duplicate_tree_structures_average_to_single_tree_weights() {
        let samples = line_samples(8);
        let one = ForestParams {
            n_trees: 1,
            bootstrap: false,
            seed: 1,
            ..no_bootstrap(1)
        };
        let two = ForestParams {
            n_trees: 2,
            ..one.clone()
        };
        // Without bootstrap every tree sees identical data and RNG only
        // affects mtry order (d = 1), so structures coincide.
        let f1 = fit_poly_forest(&samples, &[1.0], 1, &one).unwrap();
        let f2 = fit_poly_forest(&samples, &[1.0], 1, &two).unwrap();
        let w1 = extract_weights(&f1, &samples).unwrap();
        let w2 = extract_weights(&f2, &samples).unwrap();
        for (a, b) in w1.entries().iter().zip(w2.entries().iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn forest_determinism_across_thread_counts() {
        let samples = line_samples(50);
        let params = ForestParams {
            n_trees: 16,
            bootstrap: true,
            seed: 77,
            ..ForestParams::default()
        };
        let a = fit_poly_forest(&samples, &[1.0], 1, &params).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| fit_poly_forest(&samples, &[1.0], 1, &params).unwrap());
        assert_eq!(a, b);
        let wa = extract_weights(&a, &samples).unwrap();
        let wb = pool.install(|| extract_weights(&b, &samples).unwrap());
        assert_eq!(wa.entries(), wb.entries());
    }

    #[test]
    fn quantile_prediction_follows_cumulative_rule() {
        // Single-leaf forest over four samples: uniform weights.
        let covariates = arr2(&[[0.0], [1.0], [2.0], [3.0]]);
        let responses = arr1(&[1.0, 2.0, 3.0, 4.0]);
        let params = ForestParams {
            impurity_tol: f64::INFINITY,
            n_trees: 1,
            bootstrap: false,
            ..ForestParams::default()
        };
        let forest = fit_regression_forest(&covariates, &responses, &params).unwrap();
        assert_relative_eq!(predict_quantile(&forest, &responses, &[1.0], 0.5).unwrap(), 2.0);
        assert_relative_eq!(predict_quantile(&forest, &responses, &[1.0], 0.75).unwrap(), 3.0);
        assert_relative_eq!(predict_quantile(&forest, &responses, &[1.0], 0.76).unwrap(), 4.0);
        assert!(predict_quantile(&forest, &responses, &[1.0], 0.0).is_err());
        assert!(predict_quantile(&forest, &responses, &[1.0], 1.0).is_err());
    }

    #[test]
    fn forest_roundtrips_through_file() {
        let samples = line_samples(12);
        let params = ForestParams {
            n_trees: 3,
            bootstrap: true,
            seed: 21,
            ..ForestParams::default()
        };
        let forest = fit_poly_forest(&samples, &[1.0], 1, &params).unwrap();
        let dir = std::env::temp_dir().join("extrabound-forest-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("forest.json");
        forest.save_to(&path).unwrap();
        let loaded = Forest::load_from(&path).unwrap();
        assert_eq!(forest, loaded);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn forest_load_rejects_bad_version() {
        let dir = std::env::temp_dir().join("extrabound-forest-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad_version.json");
        let samples = line_samples(4);
        let forest = fit_poly_forest(&samples, &[1.0], 1, &no_bootstrap(0)).unwrap();
        let mut file = serde_json::json!({
            "format": FOREST_FORMAT,
            "version": 99,
            "forest": serde_json::to_value(&forest).unwrap(),
        });
        std::fs::write(&path, file.to_string()).unwrap();
        assert!(Forest::load_from(&path).is_err());
        file["version"] = serde_json::json!(FOREST_VERSION);
        file["format"] = serde_json::json!("something-else");
        std::fs::write(&path, file.to_string()).unwrap();
        assert!(Forest::load_from(&path).is_err());
        std::fs::remove_file(&path).ok();
    }
}
