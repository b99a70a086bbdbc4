mod common;

use common::gaussian;
use conca_lab::pipeline::total_variance;
use conca_lab::train::{train_dict_with, LossTrace};
use conca_lab::{init_model, loss_eval, train_dict_matrix, DictConfig, Error, ModelKind, Norm, Surrogate, TrainConfig};
use nalgebra::DMatrix;

#[test]
fn square_unpenalized_dictionary_reaches_exact_capacity() {
    let mixing = gaussian(64, 64, 2) / 8.0;
    let data = gaussian(4_096, 64, 1) * mixing;
    let variance = total_variance(&data);
    // least-squares oracle: the identity pair reconstructs exactly
    let identity = DMatrix::<f64>::identity(64, 64);
    assert!(((&data * &identity * &identity) - &data).abs().max() < 1e-12);

    let model = init_model(&DictConfig::conca(64, 64, Norm::dropout(0.0), Surrogate::Softplus).with_seed(3)).unwrap();
    let cfg = TrainConfig { steps: 5_000, alpha: 0.0, ..TrainConfig::desk() };
    let (model, _) = train_dict_matrix(model, &data, &cfg).unwrap();
    let mse = loss_eval(&model, &data, 0.0).unwrap().mse;
    assert!(mse < 0.01 * variance, "mse {mse} vs variance {variance}");
}

#[test]
fn training_twice_gives_identical_traces() {
    let data = gaussian(700, 6, 4);
    let run = || {
        let model = init_model(&DictConfig::conca(6, 12, Norm::dropout(0.2), Surrogate::Selu).with_seed(5)).unwrap();
        train_dict_matrix(model, &data, &TrainConfig { steps: 60, batch_size: 128, ..TrainConfig::desk() }).unwrap()
    };
    let (a, ta) = run();
    let (b, tb) = run();
    assert_eq!(a, b);
    let bits = |t: &LossTrace| {
        t.records.iter().map(|r| (r.mse.to_bits(), r.sparsity.to_bits(), r.total.to_bits())).collect::<Vec<_>>()
    };
    assert_eq!(bits(&ta), bits(&tb));
}

#[test]
fn every_kind_trains_without_error() {
    let data = gaussian(500, 8, 6);
    let configs = [
        DictConfig::conca(8, 16, Norm::layer(), Surrogate::Softplus),
        DictConfig::conca(8, 16, Norm::batch(), Surrogate::Elu),
        DictConfig::conca(8, 16, Norm::group(4), Surrogate::Selu),
        DictConfig::conca(8, 16, Norm::dropout(0.1), Surrogate::ExpClamped { lo: -20.0, hi: 20.0 }),
        DictConfig::sae(ModelKind::SaeReluPanneal, 8, 16),
        DictConfig::sae(ModelKind::SaeTopk { k: 4 }, 8, 16),
        DictConfig::sae(ModelKind::SaeBatchTopk { k: 4 }, 8, 16),
    ];
    let cfg = TrainConfig { steps: 100, batch_size: 100, ..TrainConfig::desk() };
    for c in configs {
        let (model, trace) = train_dict_matrix(init_model(&c).unwrap(), &data, &cfg).unwrap();
        let first = trace.records[0].mse;
        let last = trace.tail_mean(10).unwrap().mse;
        assert!(last < first, "{} {}: {first} -> {last}", c.kind.name(), c.norm.name());
        assert!(loss_eval(&model, &data, cfg.alpha).unwrap().is_finite());
    }
}

#[test]
fn checkpoint_callback_sees_schedule_and_final_step() {
    let data = gaussian(200, 4, 7);
    let model = init_model(&DictConfig::conca(4, 8, Norm::layer(), Surrogate::Softplus)).unwrap();
    let mut seen = Vec::new();
    let cfg = TrainConfig { steps: 25, batch_size: 50, checkpoint_every: 10, ..TrainConfig::desk() };
    train_dict_with(model, &data, &cfg, |step, _| {
        seen.push(step);
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, vec![10, 20, 25]);
}

#[test]
fn trace_csv_has_one_row_per_step() {
    let data = gaussian(100, 3, 8);
    let model = init_model(&DictConfig::conca(3, 6, Norm::layer(), Surrogate::Softplus)).unwrap();
    let (_, trace) =
        train_dict_matrix(model, &data, &TrainConfig { steps: 12, batch_size: 20, ..TrainConfig::desk() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    trace.write_csv(dir.path().join("t.csv")).unwrap();
    let mut rdr = csv::Reader::from_path(dir.path().join("t.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), vec!["step", "mse", "sparsity", "total", "lr"]);
    assert_eq!(rdr.records().count(), 12);
}

#[test]
fn invalid_config_lists_all_problems() {
    let data = gaussian(10, 3, 9);
    let model = init_model(&DictConfig::conca(3, 6, Norm::layer(), Surrogate::Softplus)).unwrap();
    let cfg = TrainConfig { steps: 0, batch_size: 0, lr: -1.0, ..TrainConfig::desk() };
    match train_dict_matrix(model, &data, &cfg) {
        Err(Error::InvalidConfig(problems)) => assert!(problems.len() >= 3, "{problems:?}"),
        other => panic!("expected invalid config, got {other:?}"),
    }
}
