//! Sample a latent world, draw data from it and inspect exact posteriors
//! alongside counterfactual twins.
//!
//! `cargo run --release --example world_sampling`

use conca_lab::world::{exact_posterior, flip_value};
use conca_lab::{ancestral_sample, make_counterfactuals, sample_world};

fn main() -> conca_lab::Result<()> {
    let world = sample_world(5, 10, 7)?;
    println!("cardinalities {:?}", world.cardinalities());
    println!("edges {:?}", world.edges());
    println!("masked latent z{} (context dim {})", world.mask_index(), world.context_dim());

    let data = ancestral_sample(&world, 2_000, 11)?;
    for i in 0..world.num_latents() {
        let k = world.cardinalities()[i];
        let mut counts = vec![0usize; k];
        for z in &data.latents {
            counts[z[i]] += 1;
        }
        let freq: Vec<String> = counts.iter().map(|&c| format!("{:.3}", c as f64 / data.len() as f64)).collect();
        println!("z{i} marginal [{}]", freq.join(", "));
    }

    let x = world.context_of(&world.observe(&data.latents[0]));
    let post = exact_posterior(&world, &x)?;
    println!("sample 0 latents {:?}", data.latents[0]);
    for (i, p) in post.iter().enumerate() {
        let p: Vec<String> = p.iter().map(|v| format!("{v:.3}")).collect();
        println!("  p(z{i} | x) = [{}]", p.join(", "));
    }

    let base = data.head(3);
    let c = (world.mask_index() + 1) % world.num_latents();
    let twins = make_counterfactuals(&world, &base, c)?;
    for &(a, b, _) in &twins.counterfactual_pairs {
        let k = world.cardinalities()[c];
        assert_eq!(twins.latents[b][c], flip_value(twins.latents[a][c], k));
        println!("pair {:?} -> {:?}", twins.latents[a], twins.latents[b]);
    }
    Ok(())
}
