//! Assembly of lower/upper extrapolation bounds at target points.
//!
//! Bounds are built from Taylor expansions anchored at observed samples:
//! the polynomial part uses the derivative estimates at the anchor, the
//! highest-order term is replaced by its worst case over all samples.
//! The lower envelope is the max over anchors of the per-anchor lower
//! bound, the upper envelope the min of the per-anchor upper bound, and
//! crossing envelopes are clamped to their midpoint.

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::data::{BoundTable, DerivativeField, SampleSet};
use crate::error::{Error, Result};

/// Resolves a raw (lower, upper) pair into a valid interval.
///
/// Returns the pair unchanged when `raw_lower <= raw_upper`; otherwise both
/// endpoints collapse to the midpoint and the clamp flag is set.
pub fn clamp_bounds(raw_lower: f64, raw_upper: f64) -> Result<(f64, f64, bool)> {
    if !raw_lower.is_finite() || !raw_upper.is_finite() {
        return Err(Error::NonFinite(format!(
            "clamp_bounds({raw_lower}, {raw_upper})"
        )));
    }
    if raw_lower <= raw_upper {
        Ok((raw_lower, raw_upper, false))
    } else {
        let mid = 0.5 * (raw_lower + raw_upper);
        Ok((mid, mid, true))
    }
}

fn validate_targets(targets: &Array2<f64>, d: usize) -> Result<()> {
    if targets.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "targets have {} columns, samples have dimension {}",
            targets.ncols(),
            d
        )));
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("target matrix".into()));
    }
    Ok(())
}

fn validate_anchors(anchor_subset: Option<&[usize]>, n: usize) -> Result<Vec<usize>> {
    match anchor_subset {
        None => Ok((0..n).collect()),
        Some([]) => Err(Error::EmptyInput("anchor subset".into())),
        Some(subset) => {
            if let Some(&bad) = subset.iter().find(|&&i| i >= n) {
                return Err(Error::InvalidParameter(format!(
                    "anchor index {bad} out of range for n={n}"
                )));
            }
            Ok(subset.to_vec())
        }
    }
}

/// Order-one (gradient based) extrapolation bounds at `targets`.
///
/// For each target and each anchor `i`, the candidate slopes are the
/// gradients at *all* `n` samples applied to the offset `target - X_i`;
/// the anchor contributes `pilot[i] + min` as its lower and `pilot[i] + max`
/// as its upper bound. Anchors may be restricted via `anchor_subset`, the
/// inner slope scan always runs over all samples.
pub fn bounds_order_one(
    samples: &SampleSet,
    derivs: &DerivativeField,
    targets: &Array2<f64>,
    anchor_subset: Option<&[usize]>,
) -> Result<BoundTable> {
    let gradients = match derivs {
        DerivativeField::OrderOne(g) => g,
        DerivativeField::OneDimensional(_) => {
            return Err(Error::InvalidParameter(
                "bounds_order_one requires an order-one derivative field".into(),
            ))
        }
    };
    let n = samples.n();
    let d = samples.dim();
    if gradients.nrows() != n || gradients.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "gradient matrix is {}x{}, expected {}x{}",
            gradients.nrows(),
            gradients.ncols(),
            n,
            d
        )));
    }
    validate_targets(targets, d)?;
    let anchors = validate_anchors(anchor_subset, n)?;

    let xs = samples.covariates().as_standard_layout().into_owned();
    let xs = xs.as_slice().expect("standard layout");
    let gs = gradients.as_standard_layout().into_owned();
    let gs = gs.as_slice().expect("standard layout");
    let pilot = samples.pilot();
    let tg = targets.as_standard_layout().into_owned();
    let tg_slice = tg.as_slice().expect("standard layout");
    let m = targets.nrows();

    let rows: Vec<(f64, f64, bool)> = (0..m)
        .into_par_iter()
        .map(|t| {
            let target = &tg_slice[t * d..(t + 1) * d];
            order_one_envelope(xs, gs, pilot, n, d, &anchors, target)
        })
        .collect();

    Ok(assemble_table(targets.clone(), rows))
}

/// The per-target envelope: max over anchors of (pilot + min slope term),
/// min over anchors of (pilot + max slope term), clamped.
fn order_one_envelope(
    xs: &[f64],
    gs: &[f64],
    pilot: &Array1<f64>,
    n: usize,
    d: usize,
    anchors: &[usize],
    target: &[f64],
) -> (f64, f64, bool) {
    let mut raw_lower = f64::NEG_INFINITY;
    let mut raw_upper = f64::INFINITY;
    let mut offset = vec![0.0; d];
    for &i in anchors {
        let xi = &xs[i * d..(i + 1) * d];
        for j in 0..d {
            offset[j] = target[j] - xi[j];
        }
        let mut min_s = f64::INFINITY;
        let mut max_s = f64::NEG_INFINITY;
        for k in 0..n {
            let gk = &gs[k * d..(k + 1) * d];
            let mut s = 0.0;
            for j in 0..d {
                s += gk[j] * offset[j];
            }
            if s < min_s {
                min_s = s;
            }
            if s > max_s {
                max_s = s;
            }
        }
        let lo_i = pilot[i] + min_s;
        let up_i = pilot[i] + max_s;
        if lo_i > raw_lower {
            raw_lower = lo_i;
        }
        if up_i < raw_upper {
            raw_upper = up_i;
        }
    }
    clamp_bounds(raw_lower, raw_upper).expect("finite envelope")
}

/// Order-one bounds with per-target anchor subselection: each target uses
/// its own `anchor_count` closest anchors (gradient-scaled metric), while
/// the inner slope scan still runs over all samples.
pub fn bounds_order_one_selected(
    samples: &SampleSet,
    derivs: &DerivativeField,
    targets: &Array2<f64>,
    anchor_count: usize,
) -> Result<BoundTable> {
    let gradients = match derivs {
        DerivativeField::OrderOne(g) => g,
        DerivativeField::OneDimensional(_) => {
            return Err(Error::InvalidParameter(
                "bounds_order_one_selected requires an order-one derivative field".into(),
            ))
        }
    };
    let n = samples.n();
    let d = samples.dim();
    if anchor_count >= n {
        return bounds_order_one(samples, derivs, targets, None);
    }
    if gradients.nrows() != n || gradients.ncols() != d {
        return Err(Error::DimensionMismatch("gradient matrix shape".into()));
    }
    validate_targets(targets, d)?;

    let xs = samples.covariates().as_standard_layout().into_owned();
    let xs = xs.as_slice().expect("standard layout");
    let gs = gradients.as_standard_layout().into_owned();
    let gs = gs.as_slice().expect("standard layout");
    let pilot = samples.pilot();
    let tg = targets.as_standard_layout().into_owned();
    let tg_slice = tg.as_slice().expect("standard layout");
    let m = targets.nrows();

    let rows: Vec<Result<(f64, f64, bool)>> = (0..m)
        .into_par_iter()
        .map(|t| {
            let target = &tg_slice[t * d..(t + 1) * d];
            let anchors = select_anchors(samples, derivs, target, anchor_count)?;
            Ok(order_one_envelope(xs, gs, pilot, n, d, &anchors, target))
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(assemble_table(targets.clone(), rows))
}

/// One-dimensional extrapolation bounds of arbitrary order `q`.
///
/// Each anchor contributes its Taylor polynomial through order `q - 1`
/// plus the worst case over all samples of the order-`q` term.
pub fn bounds_one_dim(
    samples: &SampleSet,
    derivs: &DerivativeField,
    targets: &Array2<f64>,
    q: usize,
) -> Result<BoundTable> {
    if q < 1 {
        return Err(Error::InvalidParameter("order q must be >= 1".into()));
    }
    if samples.dim() != 1 {
        return Err(Error::InvalidParameter(format!(
            "bounds_one_dim requires d = 1, got d = {}",
            samples.dim()
        )));
    }
    let table = match derivs {
        DerivativeField::OneDimensional(m) => m,
        DerivativeField::OrderOne(_) => {
            return Err(Error::InvalidParameter(
                "bounds_one_dim requires a one-dimensional derivative field".into(),
            ))
        }
    };
    let n = samples.n();
    if table.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "derivative field has {} rows, expected {}",
            table.nrows(),
            n
        )));
    }
    if table.ncols() < q {
        return Err(Error::InvalidParameter(format!(
            "derivative field carries orders 1..={}, need 1..={}",
            table.ncols(),
            q
        )));
    }
    validate_targets(targets, 1)?;

    // Factorials 0..=q; q stays small so f64 is exact.
    let mut fact = vec![1.0; q + 1];
    for k in 1..=q {
        fact[k] = fact[k - 1] * k as f64;
    }

    let pilot = samples.pilot();
    let xs: Vec<f64> = samples.covariates().column(0).to_vec();
    let top_order: Vec<f64> = table.column(q - 1).to_vec();
    let m = targets.nrows();

    let rows: Vec<(f64, f64, bool)> = (0..m)
        .into_par_iter()
        .map(|t| {
            let target = targets[[t, 0]];
            let mut raw_lower = f64::NEG_INFINITY;
            let mut raw_upper = f64::INFINITY;
            for i in 0..n {
                let h = target - xs[i];
                // Taylor polynomial through order q-1 anchored at X_i.
                let mut base = pilot[i];
                let mut hk = 1.0;
                for k in 1..q {
                    hk *= h;
                    base += table[[i, k - 1]] * hk / fact[k];
                }
                let hq = hk * h / fact[q];
                let mut min_s = f64::INFINITY;
                let mut max_s = f64::NEG_INFINITY;
                for &dq in &top_order {
                    let s = dq * hq;
                    if s < min_s {
                        min_s = s;
                    }
                    if s > max_s {
                        max_s = s;
                    }
                }
                let lo_i = base + min_s;
                let up_i = base + max_s;
                if lo_i > raw_lower {
                    raw_lower = lo_i;
                }
                if up_i < raw_upper {
                    raw_upper = up_i;
                }
            }
            clamp_bounds(raw_lower, raw_upper).expect("finite envelope")
        })
        .collect();

    Ok(assemble_table(targets.clone(), rows))
}

fn assemble_table(targets: Array2<f64>, rows: Vec<(f64, f64, bool)>) -> BoundTable {
    let lower = Array1::from_iter(rows.iter().map(|r| r.0));
    let upper = Array1::from_iter(rows.iter().map(|r| r.1));
    let clamped = rows.iter().map(|r| r.2).collect();
    BoundTable {
        targets,
        lower,
        upper,
        clamped,
    }
}

/// Picks the `k` anchor indices closest to `target` in the gradient-scaled
/// metric `sqrt((X_i - target)^T C (X_i - target))`, where `C` is the sample
/// covariance of the gradient rows.
///
/// When the scaled distances are all within 1e-12 of each other the metric
/// is uninformative (degenerate covariance) and plain Euclidean distances
/// are used instead. Ties break toward the smaller index. `k >= n` returns
/// all indices.
pub fn select_anchors(
    samples: &SampleSet,
    derivs: &DerivativeField,
    target: &[f64],
    k: usize,
) -> Result<Vec<usize>> {
    if k < 1 {
        return Err(Error::InvalidParameter("anchor count k must be >= 1".into()));
    }
    let gradients = match derivs {
        DerivativeField::OrderOne(g) => g,
        DerivativeField::OneDimensional(_) => {
            return Err(Error::InvalidParameter(
                "select_anchors requires an order-one derivative field".into(),
            ))
        }
    };
    let n = samples.n();
    let d = samples.dim();
    if target.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "target has {} coordinates, samples have dimension {}",
            target.len(),
            d
        )));
    }
    if target.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("anchor selection target".into()));
    }
    if k >= n {
        return Ok((0..n).collect());
    }

    let cov = gradient_covariance(gradients);
    let xs = samples.covariates();
    let mut scaled: Vec<f64> = Vec::with_capacity(n);
    let mut delta = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            delta[j] = xs[[i, j]] - target[j];
        }
        // Quadratic form delta^T C delta; clip roundoff below zero.
        let mut q = 0.0;
        for a in 0..d {
            for b in 0..d {
                q += delta[a] * cov[[a, b]] * delta[b];
            }
        }
        scaled.push(q.max(0.0).sqrt());
    }

    let spread = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - scaled.iter().cloned().fold(f64::INFINITY, f64::min);
    let dists: Vec<f64> = if spread < 1e-12 {
        (0..n)
            .map(|i| {
                let mut s = 0.0;
                for j in 0..d {
                    let dj = xs[[i, j]] - target[j];
                    s += dj * dj;
                }
                s.sqrt()
            })
            .collect()
    } else {
        scaled
    };

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        dists[a]
            .partial_cmp(&dists[b])
            .expect("finite distances")
            .then(a.cmp(&b))
    });
    order.truncate(k);
    Ok(order)
}

/// Sample covariance of the gradient rows with 1/n scaling on both terms.
fn gradient_covariance(gradients: &Array2<f64>) -> Array2<f64> {
    let n = gradients.nrows();
    let d = gradients.ncols();
    let mean = gradients.mean_axis(ndarray::Axis(0)).expect("n >= 1");
    let mut cov = Array2::zeros((d, d));
    for i in 0..n {
        for a in 0..d {
            let da = gradients[[i, a]] - mean[a];
            for b in 0..d {
                cov[[a, b]] += da * (gradients[[i, b]] - mean[b]);
            }
        }
    }
    cov / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::{arr1, arr2};

    fn two_point_fixture() -> (SampleSet, DerivativeField) {
        let samples = SampleSet::new(arr2(&[[0.0], [1.0]]), arr1(&[0.0, 1.0])).unwrap();
        let derivs = DerivativeField::order_one(arr2(&[[0.0], [2.0]])).unwrap();
        (samples, derivs)
    }

    #[test]
    fn clamp_passes_ordered_pairs() {
        assert_eq!(clamp_bounds(1.0, 3.0).unwrap(), (1.0, 3.0, false));
        assert_eq!(clamp_bounds(5.0, 5.0).unwrap(), (5.0, 5.0, false));
    }

    #[test]
    fn clamp_collapses_crossing_pairs_to_midpoint() {
        assert_eq!(clamp_bounds(3.0, 1.0).unwrap(), (2.0, 2.0, true));
    }

    #[test]
    fn clamp_rejects_non_finite() {
        assert!(clamp_bounds(f64::NAN, 0.0).is_err());
        assert!(clamp_bounds(0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn order_one_two_point_example() {
        let (samples, derivs) = two_point_fixture();
        let table =
            bounds_order_one(&samples, &derivs, &arr2(&[[2.0], [0.5]]), None).unwrap();
        // Hand evaluation: anchor 0 gives [0, 4], anchor 1 gives [1, 3].
        assert_relative_eq!(table.lower[0], 1.0);
        assert_relative_eq!(table.upper[0], 3.0);
        assert_relative_eq!(table.lower[1], 0.0);
        assert_relative_eq!(table.upper[1], 1.0);
        assert!(!table.clamped[0] && !table.clamped[1]);
    }

    #[test]
    fn order_one_constant_gradient_is_exact_linear_extension() {
        let samples = SampleSet::new(
            arr2(&[[0.0, 0.0], [1.0, 0.5], [0.2, -1.0]]),
            arr1(&[1.0, 3.5, 0.4]),
        )
        .unwrap();
        let derivs =
            DerivativeField::order_one(arr2(&[[2.0, 1.0], [2.0, 1.0], [2.0, 1.0]])).unwrap();
        let targets = arr2(&[[3.0, -2.0], [-1.0, 4.0]]);
        let table = bounds_order_one(&samples, &derivs, &targets, None).unwrap();
        for t in 0..2 {
            let exact = 1.0 + 2.0 * targets[[t, 0]] + 1.0 * targets[[t, 1]];
            assert_relative_eq!(table.lower[t], exact, max_relative = 1e-12);
            assert_relative_eq!(table.upper[t], exact, max_relative = 1e-12);
        }
    }

    #[test]
    fn order_one_rejects_bad_input() {
        let (samples, derivs) = two_point_fixture();
        assert!(bounds_order_one(&samples, &derivs, &arr2(&[[0.0]]), Some(&[])).is_err());
        assert!(bounds_order_one(&samples, &derivs, &arr2(&[[0.0, 1.0]]), None).is_err());
        assert!(
            bounds_order_one(&samples, &derivs, &arr2(&[[f64::NAN]]), None).is_err()
        );
        assert!(bounds_order_one(&samples, &derivs, &arr2(&[[0.0]]), Some(&[7])).is_err());
    }

    #[test]
    fn anchor_subset_still_scans_all_slopes() {
        let (samples, derivs) = two_point_fixture();
        // Anchor 1 alone: slopes still from both samples -> [1, 3] at 2.
        let table =
            bounds_order_one(&samples, &derivs, &arr2(&[[2.0]]), Some(&[1])).unwrap();
        assert_relative_eq!(table.lower[0], 1.0);
        assert_relative_eq!(table.upper[0], 3.0);
        // Anchor 0 alone: [0, 4], wider than the full-anchor interval.
        let table =
            bounds_order_one(&samples, &derivs, &arr2(&[[2.0]]), Some(&[0])).unwrap();
        assert_relative_eq!(table.lower[0], 0.0);
        assert_relative_eq!(table.upper[0], 4.0);
    }

    #[test]
    fn one_dim_recovers_exact_quadratic() {
        let samples =
            SampleSet::new(arr2(&[[-1.0], [0.0], [1.0]]), arr1(&[1.0, 0.0, 1.0])).unwrap();
        let derivs = DerivativeField::one_dimensional(arr2(&[
            [-2.0, 2.0],
            [0.0, 2.0],
            [2.0, 2.0],
        ]))
        .unwrap();
        let table = bounds_one_dim(&samples, &derivs, &arr2(&[[2.0]]), 2).unwrap();
        assert_relative_eq!(table.lower[0], 4.0, max_relative = 1e-12);
        assert_relative_eq!(table.upper[0], 4.0, max_relative = 1e-12);
    }

    #[test]
    fn one_dim_q1_matches_order_one() {
        let (samples, derivs) = two_point_fixture();
        let one_dim = DerivativeField::one_dimensional(arr2(&[[0.0], [2.0]])).unwrap();
        let targets = arr2(&[[2.0], [0.5], [-1.5]]);
        let a = bounds_order_one(&samples, &derivs, &targets, None).unwrap();
        let b = bounds_one_dim(&samples, &one_dim, &targets, 1).unwrap();
        for t in 0..targets.nrows() {
            assert_relative_eq!(a.lower[t], b.lower[t], max_relative = 1e-12);
            assert_relative_eq!(a.upper[t], b.upper[t], max_relative = 1e-12);
        }
    }

    #[test]
    fn one_dim_support_point_is_tight() {
        // Derivative field dominated by itself: min/max attained in-sample.
        let samples =
            SampleSet::new(arr2(&[[-1.0], [0.0], [1.0]]), arr1(&[1.0, 0.0, 1.0])).unwrap();
        let derivs = DerivativeField::one_dimensional(arr2(&[
            [-2.0, 2.0],
            [0.0, 2.0],
            [2.0, 2.0],
        ]))
        .unwrap();
        let table = bounds_one_dim(&samples, &derivs, &arr2(&[[0.0]]), 2).unwrap();
        assert_relative_eq!(table.lower[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(table.upper[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn one_dim_rejects_bad_orders() {
        let (samples, _) = two_point_fixture();
        let one_dim = DerivativeField::one_dimensional(arr2(&[[0.0], [2.0]])).unwrap();
        assert!(bounds_one_dim(&samples, &one_dim, &arr2(&[[0.0]]), 0).is_err());
        assert!(bounds_one_dim(&samples, &one_dim, &arr2(&[[0.0]]), 2).is_err());
        let wide = SampleSet::new(arr2(&[[0.0, 0.0]]), arr1(&[0.0])).unwrap();
        let g = DerivativeField::one_dimensional(arr2(&[[0.0]])).unwrap();
        assert!(bounds_one_dim(&wide, &g, &arr2(&[[0.0, 0.0]]), 1).is_err());
    }

    #[test]
    fn select_anchors_returns_all_when_k_large() {
        let (samples, derivs) = two_point_fixture();
        assert_eq!(
            select_anchors(&samples, &derivs, &[0.0], 10).unwrap(),
            vec![0, 1]
        );
    }

    #[test]
    fn select_anchors_euclidean_fallback_on_constant_gradients() {
        let samples = SampleSet::new(
            arr2(&[[0.0, 0.0], [3.0, 0.0], [1.0, 0.0]]),
            arr1(&[0.0, 0.0, 0.0]),
        )
        .unwrap();
        let derivs =
            DerivativeField::order_one(arr2(&[[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]])).unwrap();
        let picked = select_anchors(&samples, &derivs, &[0.9, 0.0], 2).unwrap();
        assert_eq!(picked, vec![2, 0]);
    }

    #[test]
    fn select_anchors_uses_gradient_scaled_metric() {
        // Gradients vary only in coordinate 0 (population covariance
        // diag(1, 0)), so distance in coordinate 1 is free.
        let samples =
            SampleSet::new(arr2(&[[0.0, 0.0], [1.0, 0.0]]), arr1(&[0.0, 0.0])).unwrap();
        let derivs = DerivativeField::order_one(arr2(&[[1.0, 0.0], [3.0, 0.0]])).unwrap();
        let picked = select_anchors(&samples, &derivs, &[0.0, 5.0], 1).unwrap();
        assert_eq!(picked, vec![0]);
    }

    #[test]
    fn select_anchors_rejects_zero_k() {
        let (samples, derivs) = two_point_fixture();
        assert!(select_anchors(&samples, &derivs, &[0.0], 0).is_err());
    }

    #[test]
    fn selected_variant_matches_manual_selection() {
        let samples = SampleSet::new(
            arr2(&[[0.0], [1.0], [3.0]]),
            arr1(&[0.0, 1.0, 2.0]),
        )
        .unwrap();
        let derivs = DerivativeField::order_one(arr2(&[[0.0], [2.0], [1.0]])).unwrap();
        let targets = arr2(&[[4.0], [-1.0]]);
        let table =
            bounds_order_one_selected(&samples, &derivs, &targets, 2).unwrap();
        for t in 0..2 {
            let target = [targets[[t, 0]]];
            let picked = select_anchors(&samples, &derivs, &target, 2).unwrap();
            let single = bounds_order_one(
                &samples,
                &derivs,
                &targets.row(t).insert_axis(ndarray::Axis(0)).to_owned(),
                Some(&picked),
            )
            .unwrap();
            assert_eq!(table.lower[t], single.lower[0]);
            assert_eq!(table.upper[t], single.upper[0]);
        }
        // Requesting at least n anchors matches the full table.
        let full = bounds_order_one(&samples, &derivs, &targets, None).unwrap();
        let all = bounds_order_one_selected(&samples, &derivs, &targets, 10).unwrap();
        assert_eq!(full.lower, all.lower);
        assert_eq!(full.upper, all.upper);
    }

    #[test]
    fn translation_equivariance() {
        let (samples, derivs) = two_point_fixture();
        let targets = arr2(&[[2.0], [-1.0]]);
        let base = bounds_order_one(&samples, &derivs, &targets, None).unwrap();
        let shifted = SampleSet::new(
            samples.covariates().clone(),
            samples.pilot() + 7.25,
        )
        .unwrap();
        let moved = bounds_order_one(&shifted, &derivs, &targets, None).unwrap();
        for t in 0..targets.nrows() {
            assert_relative_eq!(moved.lower[t], base.lower[t] + 7.25, max_relative = 1e-12);
            assert_relative_eq!(moved.upper[t], base.upper[t] + 7.25, max_relative = 1e-12);
        }
    }
}
