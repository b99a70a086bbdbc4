//! Percentile-rank significance of feature changes between counterfactual
//! twins, flat and per normalization group.
//!
//! `cargo run --release --example rank_fraction`

use conca_lab::eval::{percentile_ranks, rank_fraction, DEFAULT_THRESHOLDS};
use rand::Rng;

fn main() -> conca_lab::Result<()> {
    let mut rng = conca_lab::rng::seeded(5);
    let d = 32;
    let zs: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();

    // a twin that moves four features far and leaves the rest nearly still
    let mut zt: Vec<f64> = zs.iter().map(|v| v + 0.01 * rng.random::<f64>()).collect();
    for j in [3, 9, 17, 28] {
        zt[j] += 5.0;
    }
    let ranks = percentile_ranks(&zs);
    println!("source ranks of the moved features: {:.3} {:.3} {:.3} {:.3}", ranks[3], ranks[9], ranks[17], ranks[28]);

    for k in [4, 8, 16] {
        let flat = rank_fraction(&zs, &zt, k, &DEFAULT_THRESHOLDS, 1)?;
        let grouped = rank_fraction(&zs, &zt, k, &DEFAULT_THRESHOLDS, 4)?;
        println!("k {k:>2}: flat {flat:.3}  four groups {grouped:.3}");
    }
    Ok(())
}
