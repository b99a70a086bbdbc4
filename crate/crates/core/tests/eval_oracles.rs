mod common;

use common::{brute_force_assignment, gaussian, jsd_oracle, rank_fraction_oracle, softmax};
use conca_lab::eval::{
    activation_patch, align_features, diversity_diag, diversity_from_differences, hungarian, jsd, patch_metrics,
    pearson, rank_fraction, DEFAULT_THRESHOLDS,
};
use conca_lab::{init_model, DictConfig, Norm, Surrogate};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn profit_matrix(rows: usize, cols: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = conca_lab::rng::seeded(seed);
    (0..rows).map(|_| (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

#[test]
fn hungarian_equals_brute_force_on_5x8() {
    for seed in 0..50 {
        let p = profit_matrix(5, 8, seed);
        let a = hungarian(&p).unwrap();
        let mut cols = a.columns.clone();
        cols.sort_unstable();
        cols.dedup();
        assert_eq!(cols.len(), 5);
        let recomputed: f64 = a.columns.iter().enumerate().map(|(i, &j)| p[i][j]).sum();
        assert!((recomputed - a.total).abs() < 1e-12);
        assert!((a.total - brute_force_assignment(&p)).abs() < 1e-12);
    }
}

#[test]
fn pearson_textbook_values() {
    assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap().value - 1.0).abs() < 1e-15);
    assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap().value + 1.0).abs() < 1e-15);
    assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap().value - 0.5).abs() < 1e-15);
}

#[test]
fn planted_logit_columns_give_perfect_mpc() {
    let names: Vec<String> = (0..3).map(|c| format!("c{c}")).collect();
    let mut features = Vec::new();
    let mut logits = Vec::new();
    for c in 0..3u64 {
        let mut f = gaussian(50, 12, 10 + c);
        let l: Vec<f64> = gaussian(50, 1, 20 + c).iter().copied().collect();
        for i in 0..50 {
            f[(i, 4 * c as usize + 1)] = l[i];
        }
        features.push(f);
        logits.push(l);
    }
    let report = align_features(&names, &features, &logits).unwrap();
    assert!((report.mpc - 1.0).abs() < 1e-12);
    assert_eq!(report.assignment, vec![1, 5, 9]);
}

#[test]
fn random_features_stay_inside_the_null_band() {
    let names: Vec<String> = (0..4).map(|c| format!("c{c}")).collect();
    let run = |seed: u64| {
        let features: Vec<DMatrix<f64>> = (0..4).map(|c| gaussian(400, 20, seed * 10 + c)).collect();
        let logits: Vec<Vec<f64>> =
            (0..4).map(|c| gaussian(400, 1, seed * 10 + 5 + c).iter().copied().collect()).collect();
        align_features(&names, &features, &logits).unwrap().mpc
    };
    let null: Vec<f64> = (0..20).map(run).collect();
    let max = null.iter().cloned().fold(f64::MIN, f64::max);
    // best of 20 absolute correlations at n = 400 is around 0.1
    assert!(max < 0.25, "null MPC reached {max}");
}

#[test]
fn reversed_top_k_ranking_scores_one() {
    let zs: Vec<f64> = (0..10).map(|i| i as f64).collect();
    let zt: Vec<f64> = zs.iter().rev().copied().collect();
    let f = rank_fraction(&zs, &zt, 2, &DEFAULT_THRESHOLDS, 1).unwrap();
    assert_eq!(f, 1.0);
    assert_eq!(rank_fraction(&zs, &zs, 4, &DEFAULT_THRESHOLDS, 1).unwrap(), 0.0);
}

#[test]
fn disjoint_deterministic_distributions_are_one_bit_apart() {
    assert_eq!(jsd(&[1.0, 0.0], &[0.0, 1.0]), 1.0);
    assert_eq!(jsd(&[0.3, 0.7], &[0.3, 0.7]), 0.0);
}

#[test]
fn zero_reconstruction_patch_matches_recomputation() {
    let reps = gaussian(30, 6, 1);
    let u = gaussian(12, 6, 2);
    let mut model = init_model(&DictConfig::conca(6, 8, Norm::layer(), Surrogate::Softplus)).unwrap();
    model.w_dec.fill(0.0);
    model.b_dec.fill(0.0);
    let r = activation_patch(&reps, &u, &model, 30, 0).unwrap();

    let base = &reps * u.transpose();
    let uniform = vec![1.0 / 12.0; 12];
    let (mut argmax, mut overlap, mut div) = (0.0, 0.0, 0.0);
    for row in base.row_iter() {
        let v: Vec<f64> = row.iter().copied().collect();
        let mut order: Vec<usize> = (0..12).collect();
        order.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).unwrap());
        // all-zero patched logits tie, so their top set is the first ten indices
        argmax += (order[0] == 0) as u8 as f64;
        overlap += order[..10].iter().filter(|&&i| i < 10).count() as f64 / 10.0;
        div += jsd_oracle(&softmax(&v), &uniform);
    }
    assert!((r.argmax_match - argmax / 30.0).abs() < 1e-12);
    assert!((r.top10_overlap - overlap / 30.0).abs() < 1e-12);
    assert!((r.jsd - div / 30.0).abs() < 1e-12);
}

#[test]
fn identity_patch_is_perfect() {
    let logits = gaussian(20, 50, 3);
    let r = patch_metrics(&logits, &logits).unwrap();
    assert_eq!((r.argmax_match, r.top10_overlap), (1.0, 1.0));
    assert!(r.jsd < 1e-9);
}

#[test]
fn gaussian_unembedding_is_full_rank() {
    let u = gaussian(4_096, 64, 4);
    let r = diversity_diag(&u, 4_096, 63, 0).unwrap();
    assert_eq!(r.numerical_rank, 63);
    assert!(r.singular_values.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn planted_rank_twenty_table_has_rank_twenty() {
    let u = gaussian(1_000, 20, 5) * gaussian(20, 64, 6);
    let r = diversity_diag(&u, 1_000, 63, 1).unwrap();
    assert_eq!(r.numerical_rank, 20);
}

#[test]
fn difference_spectrum_of_orthonormal_directions_is_flat() {
    let q = gaussian(16, 16, 7).qr().q();
    let r = diversity_from_differences(&q.rows(0, 15).into_owned(), 15).unwrap();
    let (hi, lo) = (r.singular_values[0], *r.singular_values.last().unwrap());
    assert!((hi - lo).abs() < 1e-8 && r.numerical_rank == 15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn hungarian_is_optimal(rows in 1usize..=6, extra in 0usize..=2, seed in any::<u64>()) {
        let cols = (rows + extra).min(8);
        let p = profit_matrix(rows, cols, seed);
        let a = hungarian(&p).unwrap();
        prop_assert!((a.total - brute_force_assignment(&p)).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn rank_fraction_matches_straight_line_oracle(seed in any::<u64>(), k in 1usize..=16, groups in prop::sample::select(vec![1usize, 2, 4, 8])) {
        let mut rng = conca_lab::rng::seeded(seed);
        let zs = common::uniform_vec(64, &mut rng);
        let zt = common::uniform_vec(64, &mut rng);
        let got = rank_fraction(&zs, &zt, k, &DEFAULT_THRESHOLDS, groups).unwrap();
        let want = rank_fraction_oracle(&zs, &zt, k, &DEFAULT_THRESHOLDS, groups);
        prop_assert!((got - want).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&got));
    }

    #[test]
    fn rank_fraction_ignores_positive_affine_maps(seed in any::<u64>(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let mut rng = conca_lab::rng::seeded(seed);
        let zs = common::uniform_vec(32, &mut rng);
        let zt = common::uniform_vec(32, &mut rng);
        let map = |v: &[f64]| v.iter().map(|x| a * x + b).collect::<Vec<_>>();
        let x = rank_fraction(&zs, &zt, 8, &DEFAULT_THRESHOLDS, 1).unwrap();
        let y = rank_fraction(&map(&zs), &map(&zt), 8, &DEFAULT_THRESHOLDS, 1).unwrap();
        prop_assert_eq!(x, y);
    }

    #[test]
    fn pearson_is_invariant_to_positive_affine_maps(xs in prop::collection::vec(-10.0f64..10.0, 3..30), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let ys: Vec<f64> = xs.iter().enumerate().map(|(i, v)| v.sin() + i as f64 * 0.1).collect();
        let p = pearson(&xs, &ys).unwrap();
        prop_assume!(!p.degenerate);
        let mapped: Vec<f64> = xs.iter().map(|v| a * v + b).collect();
        let q = pearson(&mapped, &ys).unwrap();
        prop_assert!((p.value - q.value).abs() < 1e-9);
        let neg: Vec<f64> = xs.iter().map(|v| -v).collect();
        prop_assert!((pearson(&neg, &ys).unwrap().value + p.value).abs() < 1e-9);
        prop_assert!(p.value.abs() <= 1.0 + 1e-12);
    }

    #[test]
    fn jsd_matches_definition(raw_p in prop::collection::vec(0.0f64..1.0, 2..12), seed in any::<u64>()) {
        let mut rng = conca_lab::rng::seeded(seed);
        let raw_q: Vec<f64> = raw_p.iter().map(|_| rng.random::<f64>()).collect();
        let norm = |v: &[f64]| { let s: f64 = v.iter().sum::<f64>() + 1e-300; v.iter().map(|x| x / s).collect::<Vec<_>>() };
        let (p, q) = (norm(&raw_p), norm(&raw_q));
        prop_assume!(p.iter().sum::<f64>() > 0.5);
        let d = jsd(&p, &q);
        prop_assert!((d - jsd_oracle(&p, &q)).abs() < 1e-12);
        prop_assert!((d - jsd(&q, &p)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&d));
    }
}
