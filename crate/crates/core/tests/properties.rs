//! Property tests for the structural invariants of the bound assembly,
//! forest weights and local polynomial fits.

use extrabound::bounds::{bounds_one_dim, bounds_order_one, select_anchors};
use extrabound::forest::{extract_weights, fit_poly_forest, ForestParams, WeightMatrix};
use extrabound::locpol::weighted_locpol;
use extrabound::{DerivativeField, SampleSet};
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn finite_range(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    prop::num::f64::NORMAL
        .prop_map(move |v| lo + (v.abs() % 1.0) * (hi - lo))
        .prop_filter("finite", |v| v.is_finite())
}

fn dataset(max_n: usize, d: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (2..max_n).prop_flat_map(move |n| {
        (
            prop::collection::vec(finite_range(-3.0, 3.0), n * d),
            prop::collection::vec(finite_range(-5.0, 5.0), n),
            prop::collection::vec(finite_range(-4.0, 4.0), n * d),
        )
    })
}

fn build(
    xs: &[f64],
    pilot: &[f64],
    grads: &[f64],
    d: usize,
) -> (SampleSet, DerivativeField) {
    let n = pilot.len();
    let samples = SampleSet::new(
        Array2::from_shape_vec((n, d), xs.to_vec()).unwrap(),
        Array1::from_vec(pilot.to_vec()),
    )
    .unwrap();
    let derivs =
        DerivativeField::order_one(Array2::from_shape_vec((n, d), grads.to_vec()).unwrap())
            .unwrap();
    (samples, derivs)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Shrinking the anchor set can only widen or keep the interval.
    #[test]
    fn anchor_subsets_never_tighten((xs, pilot, grads) in dataset(12, 2),
                                    target in prop::collection::vec(finite_range(-6.0, 6.0), 2)) {
        let (samples, derivs) = build(&xs, &pilot, &grads, 2);
        let n = samples.n();
        let targets = Array2::from_shape_vec((1, 2), target).unwrap();
        let full = bounds_order_one(&samples, &derivs, &targets, None).unwrap();
        let subset: Vec<usize> = (0..n).step_by(2).collect();
        let part = bounds_order_one(&samples, &derivs, &targets, Some(&subset)).unwrap();
        if !full.clamped[0] {
            prop_assert!(!part.clamped[0]);
            prop_assert!(part.lower[0] <= full.lower[0] + 1e-12);
            prop_assert!(part.upper[0] >= full.upper[0] - 1e-12);
        }
    }

    // A constant gradient field gives a zero-width exact linear extension.
    #[test]
    fn constant_gradients_mean_zero_width((xs, pilot, _) in dataset(10, 2),
                                          g in prop::collection::vec(finite_range(-3.0, 3.0), 2),
                                          target in prop::collection::vec(finite_range(-6.0, 6.0), 2)) {
        let n = pilot.len();
        // Pilot consistent with the constant gradient: exact plane.
        let plane: Vec<f64> = (0..n)
            .map(|i| 1.0 + g[0] * xs[i * 2] + g[1] * xs[i * 2 + 1])
            .collect();
        let grads: Vec<f64> = (0..n).flat_map(|_| g.clone()).collect();
        let (samples, derivs) = build(&xs, &plane, &grads, 2);
        let targets = Array2::from_shape_vec((1, 2), target).unwrap();
        let table = bounds_order_one(&samples, &derivs, &targets, None).unwrap();
        let scale = table.lower[0].abs().max(1.0);
        prop_assert!((table.upper[0] - table.lower[0]).abs() <= 1e-9 * scale);
    }

    // Adding a constant to the pilot shifts both envelopes by that constant.
    #[test]
    fn translation_equivariance((xs, pilot, grads) in dataset(10, 2),
                                shift in finite_range(-10.0, 10.0),
                                target in prop::collection::vec(finite_range(-6.0, 6.0), 2)) {
        let (samples, derivs) = build(&xs, &pilot, &grads, 2);
        let shifted: Vec<f64> = pilot.iter().map(|p| p + shift).collect();
        let (samples_shifted, _) = build(&xs, &shifted, &grads, 2);
        let targets = Array2::from_shape_vec((1, 2), target).unwrap();
        let a = bounds_order_one(&samples, &derivs, &targets, None).unwrap();
        let b = bounds_order_one(&samples_shifted, &derivs, &targets, None).unwrap();
        let scale = a.lower[0].abs().max(a.upper[0].abs()).max(1.0);
        prop_assert!((b.lower[0] - a.lower[0] - shift).abs() <= 1e-10 * scale);
        prop_assert!((b.upper[0] - a.upper[0] - shift).abs() <= 1e-10 * scale);
    }

    // The one-dimensional assembler at q = 1 agrees with the order-one one.
    #[test]
    fn one_dim_q1_equals_order_one((xs, pilot, grads) in dataset(10, 1),
                                   target in finite_range(-6.0, 6.0)) {
        let (samples, derivs) = build(&xs, &pilot, &grads, 1);
        let n = pilot.len();
        let one_dim = DerivativeField::one_dimensional(
            Array2::from_shape_vec((n, 1), grads.clone()).unwrap(),
        )
        .unwrap();
        let targets = Array2::from_shape_vec((1, 1), vec![target]).unwrap();
        let a = bounds_order_one(&samples, &derivs, &targets, None).unwrap();
        let b = bounds_one_dim(&samples, &one_dim, &targets, 1).unwrap();
        let scale = a.lower[0].abs().max(a.upper[0].abs()).max(1.0);
        prop_assert!((a.lower[0] - b.lower[0]).abs() <= 1e-12 * scale);
        prop_assert!((a.upper[0] - b.upper[0]).abs() <= 1e-12 * scale);
    }

    // Derivative-dominated quadratic fixtures: bounds are tight at sample
    // points and sandwich the function everywhere in the sampled range.
    #[test]
    fn dominated_fixture_is_tight_on_support(a in finite_range(-2.0, 2.0),
                                             b in finite_range(-3.0, 3.0),
                                             c in finite_range(-5.0, 5.0),
                                             mut interior in prop::collection::vec(finite_range(-1.9, 1.9), 3..8),
                                             probe in finite_range(-2.0, 2.0)) {
        // Samples include both endpoints of [-2, 2]; the derivative of the
        // quadratic is monotone, so its extremes are attained in-sample.
        interior.push(-2.0);
        interior.push(2.0);
        let n = interior.len();
        let pilot: Vec<f64> = interior.iter().map(|&x| a * x * x + b * x + c).collect();
        let grads: Vec<f64> = interior.iter().map(|&x| 2.0 * a * x + b).collect();
        let (samples, derivs) = build(&interior, &pilot, &grads, 1);

        let mut all_targets: Vec<f64> = interior.clone();
        all_targets.push(probe);
        let targets = Array2::from_shape_vec((n + 1, 1), all_targets.clone()).unwrap();
        let table = bounds_order_one(&samples, &derivs, &targets, None).unwrap();
        for (t, value) in pilot.iter().enumerate() {
            let scale = value.abs().max(1.0);
            prop_assert!((table.lower[t] - value).abs() <= 1e-9 * scale,
                         "lower not tight at sample {t}");
            prop_assert!((table.upper[t] - value).abs() <= 1e-9 * scale,
                         "upper not tight at sample {t}");
        }
        let truth = a * probe * probe + b * probe + c;
        let scale = truth.abs().max(1.0);
        prop_assert!(table.lower[n] <= truth + 1e-9 * scale);
        prop_assert!(table.upper[n] >= truth - 1e-9 * scale);
    }

    // Forest weights: columns sum to one, entries lie in [0, 1].
    #[test]
    fn weight_columns_are_distributions(seed in 0u64..1000,
                                        n in 6usize..25,
                                        msl in 1usize..4,
                                        bootstrap in any::<bool>()) {
        let xs: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.37 + seed as f64).sin() * 2.0).collect();
        let pilot: Vec<f64> = xs.iter().map(|&x| x * x - x).collect();
        let samples = SampleSet::new(
            Array2::from_shape_vec((n, 1), xs).unwrap(),
            Array1::from_vec(pilot),
        ).unwrap();
        let params = ForestParams {
            n_trees: 7,
            min_samples_leaf: msl,
            bootstrap,
            seed,
            ..ForestParams::default()
        };
        let forest = fit_poly_forest(&samples, &[1.0], 1, &params).unwrap();
        let weights = extract_weights(&forest, &samples).unwrap();
        for s in weights.column_sums() {
            prop_assert!((s - 1.0).abs() <= 1e-9);
        }
        for w in weights.entries() {
            prop_assert!((0.0..=1.0 + 1e-12).contains(w));
        }
    }

    // Scaling the pilot scales every local polynomial coefficient.
    #[test]
    fn locpol_scaling_equivariance(seed in 0u64..500, factor in finite_range(0.1, 4.0)) {
        let n = 12;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 + seed as f64 * 0.1).cos() * 2.0).collect();
        let pilot: Vec<f64> = xs.iter().map(|&x| (1.3 * x).sin()).collect();
        let scaled: Vec<f64> = pilot.iter().map(|p| p * factor).collect();
        let entries = Array2::from_shape_fn((n, n), |(i, l)| {
            0.05 + ((i * 31 + l * 17 + seed as usize) % 13) as f64 / 13.0
        });
        let w = WeightMatrix::from_entries(entries).unwrap();
        let mk = |p: &[f64]| SampleSet::new(
            Array2::from_shape_vec((n, 1), xs.clone()).unwrap(),
            Array1::from_vec(p.to_vec()),
        ).unwrap();
        let a = weighted_locpol(&mk(&pilot), &w, &[1.0], 1).unwrap();
        let b = weighted_locpol(&mk(&scaled), &w, &[1.0], 1).unwrap();
        let amax = a.beta().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (x, y) in a.beta().iter().zip(b.beta().iter()) {
            prop_assert!((x * factor - y).abs() <= 1e-8 * (amax * factor).max(1.0));
        }
    }

    // Anchor selection returns the requested count, ordered deterministically.
    #[test]
    fn anchor_selection_counts((xs, pilot, grads) in dataset(12, 2),
                               k in 1usize..6,
                               target in prop::collection::vec(finite_range(-4.0, 4.0), 2)) {
        let (samples, derivs) = build(&xs, &pilot, &grads, 2);
        let picked = select_anchors(&samples, &derivs, &target, k).unwrap();
        prop_assert_eq!(picked.len(), k.min(samples.n()));
        let mut dedup = picked.clone();
        dedup.sort_unstable();
        dedup.dedup();
        prop_assert_eq!(dedup.len(), picked.len());
    }
}
