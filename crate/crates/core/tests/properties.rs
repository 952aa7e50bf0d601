//! Randomized invariants.

use std::collections::BTreeMap;

use mlnc::bounds::{a_m, counting_coefficient, interface_check, loose_counting_coefficient, risk_bound_rhs, theta_matrix};
use mlnc::diagnostics::{centered_singleton_means, generation_fit, prototypes, gram_alignment, nc_metrics, self_duality_fit, Scaling};
use mlnc::pal::{affine_bound, bound_check, pal_grad, pal_loss};
use mlnc::spectral::{centered_trace, kappa, second_moment, CenteredSpectrum};
use mlnc::ufm::UfmState;
use mlnc::{LabelDistribution, LabelSet};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// `(K, m, sets)` with every set of size `m` drawn from `[K]` with a count.
fn distribution() -> impl Strategy<Value = (LabelDistribution, usize)> {
    (3usize..=7)
        .prop_flat_map(|k| (Just(k), 1..k))
        .prop_flat_map(|(k, m)| {
            let set = proptest::sample::subsequence((0..k).collect::<Vec<_>>(), m);
            (Just(k), Just(m), proptest::collection::btree_map(set, 1u64..40, 1..8))
        })
        .prop_map(|(k, m, table)| (LabelDistribution::from_entries(k, table).unwrap(), m))
}

/// As [`distribution`] but every class appears at least once.
fn covering_distribution() -> impl Strategy<Value = (LabelDistribution, usize)> {
    (distribution(), 1u64..5).prop_map(|((dist, m), extra)| {
        let k = dist.k();
        let mut table: BTreeMap<Vec<usize>, u64> = BTreeMap::new();
        for (s, &r) in dist.group(m).unwrap() {
            table.insert(s.classes().to_vec(), r);
        }
        for start in 0..k {
            let mut set: Vec<usize> = (0..m).map(|i| (start + i) % k).collect();
            set.sort_unstable();
            *table.entry(set).or_insert(0) += extra;
        }
        (LabelDistribution::from_entries(k, table).unwrap(), m)
    })
}

fn logits(k: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-30.0f64..30.0, k)
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    proptest::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn orthogonal(d: usize) -> impl Strategy<Value = DMatrix<f64>> {
    matrix(d, d).prop_filter_map("singular draw", |a| {
        let qr = a.qr();
        (qr.r().diagonal().amin() > 1e-3).then(|| qr.q())
    })
}

fn filled_state(dist: &LabelDistribution, d: usize, replicas: usize, values: &[f64]) -> UfmState {
    let mut state = UfmState::zeros(dist, d, replicas, 0.01, 0.02);
    let mut it = values.iter().cycle().copied();
    for v in state.w.iter_mut() {
        *v = it.next().unwrap();
    }
    for g in &mut state.groups {
        for h in &mut g.replicas {
            for v in h.iter_mut() {
                *v = it.next().unwrap() * 0.7 + 0.1;
            }
        }
    }
    state
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn loss_is_shift_invariant_and_nonnegative(
        (k, z, shift, m) in (2usize..10).prop_flat_map(|k| (Just(k), logits(k), -50.0f64..50.0, 1..k))
    ) {
        let s = LabelSet::new(0..m, k).unwrap();
        let base = pal_loss(&z, &s).unwrap();
        let moved: Vec<f64> = z.iter().map(|v| v + shift).collect();
        prop_assert!(base >= 0.0);
        prop_assert!((pal_loss(&moved, &s).unwrap() - base).abs() <= 1e-12 * base.max(1.0));
        let g = pal_grad(&z, &s).unwrap();
        prop_assert!(g.iter().sum::<f64>().abs() <= 1e-12);
    }

    #[test]
    fn affine_bound_holds(
        (k, z, m) in (2usize..10).prop_flat_map(|k| (Just(k), logits(k), 1..k)),
        log_c1 in -4.0f64..4.0,
    ) {
        let s = LabelSet::new((0..m).map(|i| (i * 3) % k), k);
        prop_assume!(s.as_ref().map(|s| s.len() == m).unwrap_or(false));
        let consts = affine_bound(k, m, log_c1.exp2()).unwrap();
        prop_assert!(bound_check(&z, &s.unwrap(), &consts).unwrap().margin >= -1e-12);
    }

    #[test]
    fn centered_trace_is_distribution_free((dist, m) in distribution()) {
        let g = second_moment(&dist, m).unwrap();
        prop_assert!(centered_trace(&g, m, 1e-12).holds);
    }

    #[test]
    fn kappa_is_label_permutation_invariant(
        (dist, m) in distribution(),
        seed in any::<u64>(),
    ) {
        let k = dist.k();
        let mut perm: Vec<usize> = (0..k).collect();
        let mut state = seed;
        for i in (1..k).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (state >> 33) as usize % (i + 1));
        }
        let a = kappa(&second_moment(&dist, m).unwrap()).unwrap();
        let b = kappa(&second_moment(&dist.permuted(&perm).unwrap(), m).unwrap()).unwrap();
        prop_assert!((a.kappa - b.kappa).abs() <= 1e-12);
        prop_assert!(a.kappa >= 0.0);
        prop_assert!(a.min_direction.sum().abs() <= 1e-10);
    }

    #[test]
    fn theta_columns_sum_to_zero(
        (dist, m) in distribution(),
        d in 1usize..5,
        values in proptest::collection::vec(-2.0f64..2.0, 1..64),
    ) {
        let state = filled_state(&dist, d, 2, &values);
        let theta = theta_matrix(&state.groups, dist.k(), m).unwrap();
        prop_assert!(theta.row_sum().amax() <= 1e-12 * theta.amax().max(1.0));
    }

    #[test]
    fn interface_inequality_holds(
        (dist, m) in covering_distribution(),
        d in 1usize..5,
        replicas in 1usize..4,
        values in proptest::collection::vec(-3.0f64..3.0, 1..64),
    ) {
        let state = filled_state(&dist, d, replicas, &values);
        let theta = theta_matrix(&state.groups, dist.k(), m).unwrap();
        let check = interface_check(&theta, &state.groups, &dist, m, 1e-12 * theta.norm_squared()).unwrap();
        prop_assert!(check.holds, "{} > {}", check.lhs, check.rhs);
        prop_assert!(check.rhs <= check.rhs_loose * (1.0 + 1e-12));
        prop_assert!(counting_coefficient(&dist, m).unwrap() <= loose_counting_coefficient(&dist, m).unwrap() * (1.0 + 1e-12));
    }

    #[test]
    fn a_m_decreases_in_kappa((dist, m) in covering_distribution(), lo in 0.01f64..1.0, gap in 0.01f64..1.0) {
        let small = a_m(&dist, m, lo).unwrap();
        let large = a_m(&dist, m, lo + gap).unwrap();
        prop_assert!(small > large);
        prop_assert!((small * small * lo - large * large * (lo + gap)).abs() <= 1e-9 * small * small * lo);
    }

    #[test]
    fn a_m_shrinks_as_counts_grow((dist, m) in covering_distribution(), bump in 1u64..50) {
        let spec = CenteredSpectrum::compute(&dist, m).unwrap();
        prop_assume!(spec.kappa > 1e-6);
        // Scale every count up with kappa held fixed.
        let mut table: BTreeMap<Vec<usize>, u64> = BTreeMap::new();
        for (s, &r) in dist.group(m).unwrap() {
            table.insert(s.classes().to_vec(), r * bump + r);
        }
        let denser = LabelDistribution::from_entries(dist.k(), table).unwrap();
        let a = a_m(&dist, m, spec.kappa).unwrap();
        let b = a_m(&denser, m, spec.kappa).unwrap();
        prop_assert!(b < a);
    }

    #[test]
    fn bound_rhs_is_linear_in_rho((dist, m) in covering_distribution(), c1 in 0.1f64..5.0, r1 in 0.0f64..100.0, r2 in 0.0f64..100.0) {
        let spectra = CenteredSpectrum::all(&dist).unwrap();
        prop_assume!(spectra[0].kappa > 1e-6);
        let c = BTreeMap::from([(m, c1)]);
        let f = |rho: f64| risk_bound_rhs(&dist, &spectra, &c, 0.01, 0.02, rho).unwrap();
        let sum = f(r1) + f(r2);
        prop_assert!((f(r1 + r2) - sum).abs() <= 1e-10 * sum.abs().max(1.0));
        prop_assert!(f(r1) <= 0.0);
    }

    #[test]
    fn fits_are_rotation_invariant(
        (k, d, r) in (3usize..6)
            .prop_flat_map(|k| (Just(k), k..k + 3))
            .prop_flat_map(|(k, d)| (Just(k), Just(d), orthogonal(d))),
        seed in proptest::collection::vec(-3.0f64..3.0, 64),
    ) {
        let w = DMatrix::from_fn(k, d, |i, j| seed[(i * d + j) % 64] + 0.1 * i as f64);
        let h = DMatrix::from_fn(k, d, |i, j| 0.5 * seed[(i * d + j + 7) % 64] - 0.2 * j as f64);
        let a = self_duality_fit(&h, &w).unwrap();
        let b = self_duality_fit(&(&h * &r), &(&w * &r)).unwrap();
        prop_assert!((a.c1_fit - b.c1_fit).abs() <= 1e-10 * a.c1_fit.abs().max(1.0));
        prop_assert!((a.relative_residual - b.relative_residual).abs() <= 1e-10);

        let features: Vec<(LabelSet, DVector<f64>)> = (0..k)
            .map(|i| {
                let s = LabelSet::new([i, (i + 1) % k], k).unwrap();
                let v = DVector::from_fn(d, |j, _| seed[(3 * i + j + 11) % 64]);
                (s, v)
            })
            .collect();
        let rotated: Vec<(LabelSet, DVector<f64>)> =
            features.iter().map(|(s, v)| (s.clone(), r.transpose() * v)).collect();
        let g1 = generation_fit(&features, &w, 2).unwrap();
        let g2 = generation_fit(&rotated, &(&w * &r), 2).unwrap();
        prop_assert!((g1.cm_fit - g2.cm_fit).abs() <= 1e-10 * g1.cm_fit.abs().max(1.0));
        prop_assert!((g1.relative_residual - g2.relative_residual).abs() <= 1e-10);
    }

    #[test]
    fn angle_metric_is_scale_invariant(
        values in proptest::collection::vec(-2.0f64..2.0, 96),
        t in 0.1f64..10.0,
        u in 0.1f64..10.0,
    ) {
        let dist = mlnc::Scenario::Balanced { k: 4, n1: 5, n2: 3 }.build().unwrap();
        let state = filled_state(&dist, 4, 2, &values);
        let h_hat = centered_singleton_means(&state).unwrap();
        for (s, proto) in prototypes(&state, 2) {
            let sum: DVector<f64> = s.iter().map(|c| h_hat.row(c).transpose()).sum();
            // Cosines of near-zero vectors are not well conditioned.
            prop_assume!(proto.norm() > 1e-2 && sum.norm() > 1e-2);
        }
        let mut scaled = state.clone();
        scaled.w *= u;
        for g in &mut scaled.groups {
            for h in &mut g.replicas {
                *h *= t;
            }
        }
        let a = nc_metrics(&state).unwrap();
        let b = nc_metrics(&scaled).unwrap();
        prop_assert!((a.angle.unwrap() - b.angle.unwrap()).abs() <= 1e-10);
        prop_assert!((a.nc2 - b.nc2).abs() <= 1e-10);
    }

    #[test]
    fn gram_alignment_ignores_right_rotation(
        a in (2usize..6).prop_flat_map(|k| matrix(k, 4)),
        r in orthogonal(4),
        counts in proptest::collection::vec(1u64..100, 6),
    ) {
        let k = a.nrows();
        for scaling in Scaling::ALL {
            let x = gram_alignment(&a, scaling, &counts[..k]).unwrap();
            let y = gram_alignment(&(&a * &r), scaling, &counts[..k]).unwrap();
            prop_assert!((x.c_star - y.c_star).abs() <= 1e-9 * x.c_star.abs().max(1.0));
            prop_assert!((x.residual_fro - y.residual_fro).abs() <= 1e-9 * x.c_star.abs().max(1.0));
            prop_assert!(x.residual_fro >= 0.0);
        }
    }

    #[test]
    fn label_sets_round_trip_through_text(classes in proptest::collection::btree_set(0usize..12, 1..6)) {
        let s = LabelSet::new(classes.iter().copied(), 12).unwrap();
        prop_assert_eq!(LabelSet::parse(&s.to_string(), 12).unwrap(), s);
    }

    #[test]
    fn distributions_round_trip_through_json((dist, _m) in distribution()) {
        let text = serde_json::to_string(&dist.to_table()).unwrap();
        prop_assert_eq!(LabelDistribution::from_json_str(&text).unwrap(), dist);
    }
}
