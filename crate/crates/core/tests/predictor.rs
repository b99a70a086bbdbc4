mod common;

use common::gaussian;
use conca_lab::pipeline::planted_mixture;
use conca_lab::predictor::{
    check_linear_mixture, extract_representations, permutation_null_r2, train_predictor, PredictorModel,
};
use conca_lab::world::WorldSpec;
use conca_lab::{ancestral_sample, ActivationShard, LatentWorld, TrainConfig};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

fn copy_chain_world() -> LatentWorld {
    // z1 copies z0 and is masked, so the context determines y exactly
    LatentWorld::new(WorldSpec {
        cardinalities: vec![2, 2, 2],
        edges: vec![(0, 1)],
        cpds: vec![vec![vec![0.4, 0.6]], vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![0.7, 0.3]]],
        mix_perm: vec![0, 1, 2, 3, 4, 5],
        mask_index: 1,
        seed: 0,
    })
    .unwrap()
}

#[test]
fn loss_gradient_matches_central_differences() {
    let x = gaussian(9, 5, 1);
    let y: Vec<usize> = (0..9).map(|i| i % 3).collect();
    let model = PredictorModel::init(5, 4, 3, 2);
    let (_, grad) = model.loss_gradient(&x, &y).unwrap();
    let analytic = grad.flat();
    let h = 1e-6;
    let mut numeric = Vec::new();
    let perturb = |which: usize, i: usize, delta: f64| {
        let mut m = model.clone();
        match which {
            0 => m.f_weights.as_mut_slice()[i] += delta,
            1 => m.f_bias.as_mut_slice()[i] += delta,
            _ => m.g_table.as_mut_slice()[i] += delta,
        }
        m.loss(&x, &y).unwrap()
    };
    for (which, len) in [(0, 20), (1, 4), (2, 12)] {
        for i in 0..len {
            numeric.push((perturb(which, i, h) - perturb(which, i, -h)) / (2.0 * h));
        }
    }
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(diff / scale < 1e-6, "relative error {}", diff / scale);
}

#[test]
fn deterministic_chain_is_learned_perfectly() {
    let world = copy_chain_world();
    let data = ancestral_sample(&world, 2_000, 3).unwrap();
    let fit = train_predictor(&data, 4, &TrainConfig::predictor_desk().with_seed(1)).unwrap();
    assert!(fit.train_accuracy >= 0.99, "accuracy {}", fit.train_accuracy);
    assert!(fit.final_loss < fit.initial_loss);
}

#[test]
fn representations_are_direct_matrix_products() {
    let world = copy_chain_world();
    let data = ancestral_sample(&world, 50, 4).unwrap();
    let model = PredictorModel::init(world.context_dim(), 6, 2, 5);
    let shard = extract_representations(&model, &data).unwrap();
    assert_eq!(shard.unembedding_matrix().unwrap().map(|v| v as f32 as f64), model.g_table.map(|v| v as f32 as f64));
    for (i, x) in data.samples.iter().enumerate() {
        for r in 0..6 {
            let mut s = model.f_bias[r];
            for (c, &xc) in x.iter().enumerate() {
                s += model.f_weights[(r, c)] * xc as f64;
            }
            assert_eq!(shard.row(i)[r], s as f32);
        }
    }
    let dir = tempfile::tempdir().unwrap();
    shard.write(dir.path().join("r.cact")).unwrap();
    assert_eq!(ActivationShard::read(dir.path().join("r.cact")).unwrap(), shard);
}

#[test]
fn zero_input_and_bias_give_zero_representation() {
    let mut model = PredictorModel::init(4, 3, 2, 0);
    model.f_bias = DVector::zeros(3);
    let f = model.represent(&DMatrix::zeros(2, 4)).unwrap();
    assert!(f.iter().all(|v| *v == 0.0));
}

#[test]
fn full_rank_planted_mixture_recovers_coefficients() {
    let mut rng = conca_lab::rng::seeded(6);
    let (n, k, m) = (500, 6, 4);
    // random non-degenerate posteriors over two 3-valued latents
    let logp = DMatrix::from_fn(n, k, |_, _| -rng.random_range(0.05..4.0));
    let a = gaussian(m, k, 7);
    let b = DVector::from_fn(m, |i, _| i as f64 - 1.5);
    let mut f = &logp * a.transpose();
    for mut row in f.row_iter_mut() {
        row += b.transpose();
    }
    let fit = check_linear_mixture(&f, &logp).unwrap();
    assert!(!fit.rank_deficient);
    assert!((fit.r_squared - 1.0).abs() < 1e-8);
    assert!((&fit.a_hat - &a).abs().max() < 1e-6);
    assert!((&fit.b_hat - &b).abs().max() < 1e-6);
}

#[test]
fn world_planted_mixture_is_explained_exactly() {
    let planted = planted_mixture(5, 10, 4_000, 10, 2).unwrap();
    let fit = check_linear_mixture(&planted.representations, &planted.log_posteriors).unwrap();
    assert!((fit.r_squared - 1.0).abs() < 1e-8, "r2 {}", fit.r_squared);
    let mut fitted = &planted.log_posteriors * fit.a_hat.transpose();
    for mut row in fitted.row_iter_mut() {
        row += fit.b_hat.transpose();
    }
    assert!((fitted - &planted.representations).abs().max() < 1e-6);
}

#[test]
fn noise_features_have_near_zero_r2() {
    let planted = planted_mixture(5, 10, 10_000, 10, 3).unwrap();
    let noise = gaussian(10_000, 10, 4);
    let fit = check_linear_mixture(&noise, &planted.log_posteriors).unwrap();
    assert!(fit.r_squared < 0.1, "r2 {}", fit.r_squared);
    let null = permutation_null_r2(&planted.representations, &planted.log_posteriors, 3, 5).unwrap();
    assert!(null < 0.1, "null r2 {null}");
}
