//! Linear probes on a two-class concept: full-data metrics, held-out
//! conditional entropy and few-shot AUC.
//!
//! `cargo run --release --example probing`

use conca_lab::probe::{fewshot_auc, heldout_entropy, probe_report, train_probe, L2Mode};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

fn main() -> conca_lab::Result<()> {
    let mut rng = conca_lab::rng::seeded(9);
    let n = 400;
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let x = DMatrix::from_fn(n, 16, |i, j| {
        let noise: f64 = StandardNormal.sample(&mut rng);
        if j == 0 {
            noise * 0.5 + if labels[i] == 1 { 1.5 } else { -1.5 }
        } else {
            noise
        }
    });

    let probe = train_probe(&x, &labels, 1.0)?;
    let report = probe_report(&probe, &x, &labels)?;
    println!(
        "full fit: {} iterations, accuracy {:.3}, auc {:.3}, entropy {:.3} bits",
        probe.iterations, report.accuracy, report.auc, report.mean_conditional_entropy_bits
    );

    let h = heldout_entropy(&x, &labels, 1.0, &[0, 1, 2])?;
    println!("held-out entropy {:.3} bits, accuracy {:.3}", h.mean_bits, h.mean_accuracy);
    let mut shuffled = labels.clone();
    shuffled.shuffle(&mut rng);
    let h = heldout_entropy(&x, &shuffled, 1.0, &[0, 1, 2])?;
    println!("permuted labels  {:.3} bits, accuracy {:.3}", h.mean_bits, h.mean_accuracy);

    for shots in [4, 8, 16, 32, 128] {
        let r = fewshot_auc(&x, &labels, shots, 5, 0, L2Mode::Cv)?;
        println!("{shots:>4} shots: auc {:.3} ± {:.3}, l2 {:?}", r.mean_auc, r.std_auc, r.chosen_l2);
    }
    Ok(())
}
