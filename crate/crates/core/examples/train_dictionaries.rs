//! Train layer-norm ConCA and a p-annealed ReLU SAE on toy-predictor
//! representations and compare their loss curves.
//!
//! `cargo run --release --example train_dictionaries`

use conca_lab::pipeline::{conca_layernorm, sae_panneal, synthetic_representations, total_variance, ReproConfig};
use conca_lab::{loss_eval, train_dict, Surrogate, TrainConfig};

fn main() -> conca_lab::Result<()> {
    let config = ReproConfig::default();
    let (_, shard) = synthetic_representations(&config, 3)?;
    let data = shard.to_matrix();
    println!("{} rows of dimension {}, total variance {:.4}", shard.rows(), shard.cols(), total_variance(&data));

    let train = TrainConfig { steps: 1_500, ..TrainConfig::desk() };
    let models = [
        ("conca-softplus", conca_layernorm(shard.cols(), config.d_feat, Surrogate::Softplus, 1)?),
        ("sae-panneal", sae_panneal(shard.cols(), config.d_feat, 1)?),
    ];
    for (name, model) in models {
        let (model, trace) = train_dict(model, &shard, &train)?;
        for r in trace.records.iter().step_by(300) {
            println!("{name:<15} step {:>5}  mse {:.5}  sparsity {:.3}  lr {:.4}", r.step, r.mse, r.sparsity, r.lr);
        }
        let eval = loss_eval(&model, &data, train.alpha)?;
        println!("{name:<15} eval mse {:.5}  sparsity {:.3}", eval.mse, eval.sparsity);
    }
    Ok(())
}
