//! SoftPlus versus clamped-exponential surrogates on the same
//! representations.
//!
//! `cargo run --release --example clamp_ablation -- 0 1 2`

use conca_lab::pipeline::{clamp_ablation, synthetic_representations, ReproConfig};

fn main() -> conca_lab::Result<()> {
    let seeds: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let seeds = if seeds.is_empty() { vec![0] } else { seeds };
    let config = ReproConfig::default();
    for seed in seeds {
        let (_, shard) = synthetic_representations(&config, seed)?;
        let rows = clamp_ablation(&shard.to_matrix(), config.d_feat, &config.dict.clone().with_seed(seed))?;
        for r in rows {
            let range = match (r.lo, r.hi) {
                (Some(lo), Some(hi)) => format!("[{lo}, {hi}]"),
                _ => String::new(),
            };
            println!(
                "seed {seed} {:<12} {range:<12} mse {:.5} sparsity {:.3} finite {}",
                r.surrogate, r.final_mse, r.final_sparsity, r.finite
            );
        }
    }
    Ok(())
}
