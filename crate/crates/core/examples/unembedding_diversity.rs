//! Spectrum of greedily pivoted unembedding differences for a full-rank
//! Gaussian table and a planted low-rank one.
//!
//! `cargo run --release --example unembedding_diversity`

use conca_lab::eval::diversity_diag;
use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(rows: usize, cols: usize, rng: &mut conca_lab::rng::Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn main() -> conca_lab::Result<()> {
    let mut rng = conca_lab::rng::seeded(3);
    let full = gaussian(4_096, 64, &mut rng);
    let r = diversity_diag(&full, 4_096, 63, 1)?;
    println!("gaussian 4096x64: rank {} of {}", r.numerical_rank, r.selected_indices.len());
    println!("  largest {:.2}  smallest {:.2}", r.singular_values[0], r.singular_values.last().unwrap());

    let low = gaussian(4_096, 20, &mut rng) * gaussian(20, 64, &mut rng);
    let r = diversity_diag(&low, 4_096, 63, 1)?;
    println!("planted rank 20: rank {} of {}", r.numerical_rank, r.selected_indices.len());
    let tail: Vec<String> = r.singular_values[18..23].iter().map(|s| format!("{s:.2e}")).collect();
    println!("  singular values 18..23: {}", tail.join(" "));
    Ok(())
}
