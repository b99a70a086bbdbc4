//! Fit concept probes on counterfactual pairs and match them to dictionary
//! features with a Hungarian assignment.
//!
//! `cargo run --release --example concept_alignment`

use conca_lab::eval::concept_alignment;
use conca_lab::pipeline::{conca_layernorm, concept_pair_data, ReproConfig};
use conca_lab::predictor::{extract_representations, train_predictor};
use conca_lab::{ancestral_sample, sample_world, train_dict, Surrogate};

fn main() -> conca_lab::Result<()> {
    let config = ReproConfig::default();
    let world = sample_world(config.num_latents, config.expected_edges, 40)?;
    let data = ancestral_sample(&world, config.train_samples, 41)?;
    let fit = train_predictor(&data, config.m, &config.predictor.clone().with_seed(42))?;
    println!("predictor loss {:.4} -> {:.4}", fit.initial_loss, fit.final_loss);

    let shard = extract_representations(&fit.model, &data)?;
    let model = conca_layernorm(shard.cols(), config.d_feat, Surrogate::Softplus, 43)?;
    let (model, _) = train_dict(model, &shard, &config.dict.clone().with_seed(43))?;

    let concepts: Vec<usize> = (0..world.num_latents()).filter(|&i| i != world.mask_index()).collect();
    let base = ancestral_sample(&world, 1_000, 44)?;
    let pairs = concept_pair_data(&world, &fit.model, &base, &concepts)?;
    let report = concept_alignment(&model, &pairs.representations, &pairs.manifest, 1.0, None)?;
    for row in report.rows() {
        println!("{:<4} -> feature {:>3}  pearson {:.3}", row.concept, row.feature, row.pearson);
    }
    println!("mean pearson correlation {:.3}", report.mpc);
    Ok(())
}
