//! Push representations through a dictionary and compare next-token
//! distributions before and after the substitution.
//!
//! `cargo run --release --example activation_patching`

use conca_lab::eval::{activation_patch, patch_metrics};
use conca_lab::pipeline::{conca_layernorm, synthetic_representations, ReproConfig};
use conca_lab::{train_dict, Surrogate, TrainConfig};

fn main() -> conca_lab::Result<()> {
    let config = ReproConfig::default();
    let (_, shard) = synthetic_representations(&config, 8)?;
    let reps = shard.to_matrix();
    let u = shard.unembedding_matrix().expect("predictor shards carry an unembedding");

    let logits = &reps * u.transpose();
    let same = patch_metrics(&logits, &logits)?;
    println!("identity       argmax {:.3}  top10 {:.3}  jsd {:.2e}", same.argmax_match, same.top10_overlap, same.jsd);

    let untrained = conca_layernorm(shard.cols(), config.d_feat, Surrogate::Softplus, 2)?;
    let r = activation_patch(&reps, &u, &untrained, 2_000, 0)?;
    println!("untrained      argmax {:.3}  top10 {:.3}  jsd {:.2e}", r.argmax_match, r.top10_overlap, r.jsd);

    for steps in [200, 2_000] {
        let (model, _) = train_dict(untrained.clone(), &shard, &TrainConfig { steps, ..TrainConfig::desk() })?;
        let r = activation_patch(&reps, &u, &model, 2_000, 0)?;
        println!("{steps:>5} steps    argmax {:.3}  top10 {:.3}  jsd {:.2e}", r.argmax_match, r.top10_overlap, r.jsd);
    }
    Ok(())
}
