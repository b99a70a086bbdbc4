//! Helpers and independent oracles shared by the integration tests.

#![allow(dead_code)]

use conca_lab::dict::{DictModel, Mode};
use conca_lab::train::{objective, objective_gradient, Penalty};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = conca_lab::rng::seeded(seed);
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

pub fn uniform_vec(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>()).collect()
}

/// Randomizes every parameter so gradients are not evaluated at the
/// symmetric initialization.
pub fn jitter_params(model: &mut DictModel, seed: u64) {
    let mut rng = conca_lab::rng::seeded(seed);
    for p in model.params_mut() {
        for v in p.iter_mut() {
            let n: f64 = StandardNormal.sample(&mut rng);
            *v += 0.3 * n;
        }
    }
}

/// Norm-wise relative error between the analytic gradient and central
/// differences of the total objective.
pub fn gradient_rel_error(model: &DictModel, f: &DMatrix<f64>, penalty: Penalty, mode: Mode) -> f64 {
    let (_, grad) = objective_gradient(model, f, penalty, mode).unwrap();
    let analytic = grad.flat();
    let h = 1e-6;
    let mut numeric = Vec::with_capacity(analytic.len());
    let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let mut probe = model.clone();
    for (t, &len) in sizes.iter().enumerate() {
        for i in 0..len {
            let orig = probe.params_mut()[t][i];
            probe.params_mut()[t][i] = orig + h;
            let up = objective(&probe, f, penalty, mode).unwrap().total;
            probe.params_mut()[t][i] = orig - h;
            let down = objective(&probe, f, penalty, mode).unwrap().total;
            probe.params_mut()[t][i] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
    }
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = numeric.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    diff / scale
}

/// Exhaustive search over injective row→column maps.
pub fn brute_force_assignment(profit: &[Vec<f64>]) -> f64 {
    fn go(profit: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
        if row == profit.len() {
            return 0.0;
        }
        let mut best = f64::NEG_INFINITY;
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                best = best.max(profit[row][j] + go(profit, row + 1, used));
                used[j] = false;
            }
        }
        best
    }
    let cols = profit.first().map_or(0, Vec::len);
    go(profit, 0, &mut vec![false; cols])
}

/// Step-by-step rank fraction: quadratic rank counting, repeated argmax
/// selection and explicit loops over groups and thresholds.
pub fn rank_fraction_oracle(zs: &[f64], zt: &[f64], k: usize, thresholds: &[f64], groups: usize) -> f64 {
    let d = zs.len();
    let size = d / groups;
    let kg = if groups == 1 { k } else { std::cmp::max(1, k / groups).min(size) };
    let mut acc = 0.0;
    for g in 0..groups {
        let a = &zs[g * size..(g + 1) * size];
        let b = &zt[g * size..(g + 1) * size];
        let mut diff = Vec::new();
        for i in 0..size {
            diff.push((a[i] - b[i]).abs());
        }
        let mut taken = vec![false; size];
        let mut chosen = Vec::new();
        for _ in 0..kg {
            let mut best: Option<usize> = None;
            for i in 0..size {
                if taken[i] {
                    continue;
                }
                match best {
                    None => best = Some(i),
                    Some(j) if diff[i] > diff[j] => best = Some(i),
                    _ => {}
                }
            }
            let i = best.unwrap();
            taken[i] = true;
            chosen.push(i);
        }
        let pct = |v: &[f64], i: usize| -> f64 {
            if size < 2 {
                return 0.0;
            }
            let mut less = 0.0;
            let mut equal = 0.0;
            for j in 0..size {
                if v[j] < v[i] {
                    less += 1.0;
                } else if v[j] == v[i] {
                    equal += 1.0;
                }
            }
            let rank = less + (equal + 1.0) / 2.0;
            (rank - 1.0) / (size as f64 - 1.0)
        };
        let mut per_group = 0.0;
        for &tau in thresholds {
            let mut hits = 0.0;
            for &i in &chosen {
                if (pct(a, i) - pct(b, i)).abs() > tau {
                    hits += 1.0;
                }
            }
            per_group += hits / chosen.len() as f64;
        }
        acc += per_group / thresholds.len() as f64;
    }
    acc / groups as f64
}

/// Base-2 Jensen–Shannon divergence written out from its definition.
pub fn jsd_oracle(p: &[f64], q: &[f64]) -> f64 {
    let kl = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).filter(|(x, _)| **x > 0.0).map(|(x, y)| x * (x / y).log2()).sum()
    };
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    0.5 * kl(p, &m) + 0.5 * kl(q, &m)
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}
