mod common;

use common::{brute_force_auc, noise_cohort, random_matrix, rng};
use gate_core::augment::{draw_ma, draw_sa, DrawnMode};
use gate_core::eval::{roc_auc, singular_value_profile, FoldPlan};
use gate_core::graph::{build_population_graph, random_drop, GraphConfig};
use gate_core::model::{cca_ssl_loss, cosine_term, decorrelation_term};
use gate_core::signal::{flatten_upper, pearson_fc, segment_count, unflatten_upper, window_features, WindowSpec};
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    proptest::collection::vec(-10.0f64..10.0, rows * cols)
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn sized_matrix(max_r: usize, max_c: usize) -> impl Strategy<Value = Array2<f64>> {
    (2..=max_r, 2..=max_c).prop_flat_map(|(r, c)| matrix(r, c))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fc_is_symmetric_bounded_with_unit_diagonal(seg in sized_matrix(6, 30)) {
        let fc = pearson_fc(seg.view()).unwrap();
        let r = seg.nrows();
        for i in 0..r {
            for j in 0..r {
                prop_assert_eq!(fc.values[[i, j]], fc.values[[j, i]]);
                prop_assert!((-1.0..=1.0).contains(&fc.values[[i, j]]));
            }
            if !fc.degenerate_rois.contains(&i) {
                prop_assert_eq!(fc.values[[i, i]], 1.0);
            }
        }
    }

    #[test]
    fn fc_ignores_positive_affine_rescaling(seg in matrix(4, 15), scale in proptest::collection::vec(0.1f64..5.0, 4), shift in proptest::collection::vec(-3.0f64..3.0, 4)) {
        let mut moved = seg.clone();
        for (i, mut row) in moved.rows_mut().into_iter().enumerate() {
            row.mapv_inplace(|v| scale[i] * v + shift[i]);
        }
        let a = pearson_fc(seg.view()).unwrap();
        let b = pearson_fc(moved.view()).unwrap();
        for (x, y) in a.values.iter().zip(b.values.iter()) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn flatten_round_trips(seg in sized_matrix(7, 12)) {
        let fc = pearson_fc(seg.view()).unwrap();
        let flat = flatten_upper(&fc);
        let r = seg.nrows();
        prop_assert_eq!(flat.len(), r * (r + 1) / 2);
        prop_assert_eq!(unflatten_upper(flat.as_slice().unwrap(), r).unwrap(), fc.values);
    }

    #[test]
    fn windows_fit_on_the_step_grid(t in 2usize..300, l in 1usize..60, s in 1usize..30) {
        prop_assume!(l <= t);
        let spec = WindowSpec::new(l, s).unwrap();
        let m = segment_count(t, spec).unwrap();
        prop_assert_eq!(m, (t - l) / s + 1);
        let starts = spec.starts(t).unwrap();
        prop_assert_eq!(starts.len(), m);
        for (i, st) in starts.iter().enumerate() {
            prop_assert_eq!(*st, i * s);
            prop_assert!(st + l <= t);
        }
        prop_assert!(m * s + l > t);
    }

    #[test]
    fn ssl_loss_is_bounded_below(za in matrix(5, 3), zb in matrix(5, 3), gamma in 0.0f64..2.0) {
        prop_assert!(cca_ssl_loss(&za, &zb, gamma).unwrap() >= -1.0 - 1e-12);
    }

    #[test]
    fn cosine_term_ignores_positive_row_scaling(za in matrix(4, 3), zb in matrix(4, 3), c in 0.01f64..100.0, row in 0usize..4) {
        let mut scaled = za.clone();
        scaled.row_mut(row).mapv_inplace(|v| v * c);
        let a = cosine_term(&za, &zb).unwrap();
        let b = cosine_term(&scaled, &zb).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_embeddings_are_penalized(col in proptest::collection::vec(-3.0f64..3.0, 6), w in proptest::collection::vec(-2.0f64..2.0, 3)) {
        // rank one, N >= h
        let c = Array1::from(col);
        let z = Array2::from_shape_fn((6, 3), |(i, j)| c[i] * w[j]);
        prop_assert!(decorrelation_term(&z) > 0.0);
    }

    #[test]
    fn auc_matches_pairs_and_ignores_monotone_maps(scores in proptest::collection::vec(-5.0f64..5.0, 2..40), bits in proptest::collection::vec(0usize..2, 40)) {
        let labels: Vec<usize> = bits[..scores.len()].to_vec();
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let auc = roc_auc(&scores, &labels).unwrap();
        prop_assert!((auc - brute_force_auc(&scores, &labels)).abs() < 1e-12);
        let mapped: Vec<f64> = scores.iter().map(|s| (0.7 * s).exp() + 3.0).collect();
        prop_assert!((auc - roc_auc(&mapped, &labels).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn singular_values_are_nonnegative_and_descending(z in sized_matrix(10, 6)) {
        let sv = singular_value_profile(&z).unwrap();
        prop_assert_eq!(sv.len(), z.ncols());
        prop_assert!(sv.iter().all(|&s| s >= 0.0));
        prop_assert!(sv.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn fold_plans_partition(n in 10usize..80, seed in 0u64..1000, skew in 1usize..4) {
        let labels: Vec<usize> = (0..n).map(|i| usize::from(i % (skew + 1) == 0)).collect();
        let plan = FoldPlan::stratified(&labels, 5, 2, seed).unwrap();
        let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
        for r in 0..2 {
            let mut count = vec![0; n];
            for f in 0..5 {
                let (_, test) = plan.split(r, f);
                for &i in &test { count[i] += 1; }
                let p = test.iter().filter(|&&i| labels[i] == 1).count() as f64;
                prop_assert!((p - pos / 5.0).abs() <= 1.0);
            }
            prop_assert!(count.iter().all(|&c| c == 1));
        }
    }

    #[test]
    fn sa_draws_are_neighbours(t in 60usize..300, seed in 0u64..10_000) {
        let spec = WindowSpec::default();
        let d = draw_sa(t, spec, &mut rng(seed)).unwrap();
        prop_assert_eq!(d.mode, DrawnMode::StepWindow);
        prop_assert_eq!(d.view_a.start.abs_diff(d.view_b.start), spec.step);
        prop_assert!(d.view_a.start + spec.length <= t && d.view_b.start + spec.length <= t);
    }

    #[test]
    fn ma_draws_share_anchor(t in 60usize..300, seed in 0u64..10_000) {
        let lengths = [10, 20, 30, 40, 50];
        let d = draw_ma(t, WindowSpec::default(), &lengths, &mut rng(seed)).unwrap();
        prop_assert_eq!(d.view_a.start, d.view_b.start);
        prop_assert_ne!(d.view_a.length, d.view_b.length);
        prop_assert!(lengths.contains(&d.view_a.length) && lengths.contains(&d.view_b.length));
        prop_assert!(d.view_a.start + d.view_a.length.max(d.view_b.length) <= t);
    }
}

/// Largest |eigenvalue| by power iteration on A^2 (A symmetric), so sign
/// oscillation between +-lambda does not stall convergence.
fn spectral_radius(a: &Array2<f64>) -> f64 {
    let a2 = a.dot(a);
    let mut v = Array1::from_elem(a.nrows(), 1.0) / (a.nrows() as f64).sqrt();
    let mut lambda = 0.0;
    for _ in 0..500 {
        let w = a2.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm;
        v = w / norm;
    }
    lambda.sqrt()
}

#[test]
fn normalized_adjacency_is_symmetric_and_contractive() {
    for seed in 0..25 {
        let n = 8 + (seed as usize % 5) * 3;
        let cohort = noise_cohort(n, 5, 40, seed);
        let metas: Vec<_> = cohort.iter().map(|r| r.meta.clone()).collect();
        let cfg = GraphConfig {
            k: 1 + seed as usize % 4,
            ..GraphConfig::default()
        };
        let g = build_population_graph(window_features(&cohort, 0, 30).unwrap(), &metas, &cfg).unwrap();
        assert_eq!(g.adjacency, g.adjacency.t());
        assert!(spectral_radius(&g.adjacency) <= 1.0 + 1e-9);
        let dropped = random_drop(&g, 0.3, 0.5, &mut rng(seed)).unwrap();
        assert_eq!(dropped.adjacency, dropped.adjacency.t());
        assert!(spectral_radius(&dropped.adjacency) <= 1.0 + 1e-9);
    }
}

#[test]
fn random_drop_with_zero_probabilities_is_identity() {
    let cohort = noise_cohort(14, 4, 40, 3);
    let metas: Vec<_> = cohort.iter().map(|r| r.meta.clone()).collect();
    let g = build_population_graph(window_features(&cohort, 5, 30).unwrap(), &metas, &GraphConfig::default()).unwrap();
    for seed in 0..20 {
        assert_eq!(random_drop(&g, 0.0, 0.0, &mut rng(seed)).unwrap(), g);
    }
}

#[test]
fn spectral_radius_helper_sees_negative_eigenvalues() {
    let a = ndarray::array![[0.0, 2.0], [2.0, 0.0]];
    assert!((spectral_radius(&a) - 2.0).abs() < 1e-9);
    let z = random_matrix(3, 3, &mut rng(0));
    let s = &z + &z.t();
    let top = common::jacobi_eigenvalues(&s).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!((spectral_radius(&s) - top).abs() < 1e-6);
}
