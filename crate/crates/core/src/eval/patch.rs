//! Activation patching: compare next-token distributions computed from the
//! original representation and from its dictionary reconstruction.

use nalgebra::{DMatrix, DVectorView};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::dict::DictModel;
use crate::error::{Error, Result};
use crate::rng::seeded;

pub const DEFAULT_PATCH_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchReport {
    pub samples: usize,
    pub argmax_match: f64,
    pub top10_overlap: f64,
    /// Mean base-2 Jensen–Shannon divergence, in bits.
    pub jsd: f64,
}

fn softmax(logits: DVectorView<'_, f64>) -> Vec<f64> {
    let max = logits.max();
    let e: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Base-2 Jensen–Shannon divergence of two distributions.
pub fn jsd(p: &[f64], q: &[f64]) -> f64 {
    let kl_to_mid = |a: &[f64], b: &[f64]| {
        a.iter().zip(b).filter(|(&x, _)| x > 0.0).map(|(&x, &y)| x * (2.0 * x / (x + y)).log2()).sum::<f64>()
    };
    (0.5 * kl_to_mid(p, q) + 0.5 * kl_to_mid(q, p)).clamp(0.0, 1.0)
}

fn top_indices(logits: DVectorView<'_, f64>, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Patching metrics between matching rows of two logit matrices. The
/// top-10 overlap uses `min(10, vocab)` as its denominator.
pub fn patch_metrics(base: &DMatrix<f64>, patched: &DMatrix<f64>) -> Result<PatchReport> {
    if base.shape() != patched.shape() {
        return Err(Error::Dimension(format!("logit shapes {:?} and {:?}", base.shape(), patched.shape())));
    }
    let (n, vocab) = base.shape();
    if n == 0 || vocab == 0 {
        return Err(Error::InsufficientSamples("no logits to compare".into()));
    }
    let k = vocab.min(10);
    let (mut matches, mut overlap, mut div) = (0usize, 0.0, 0.0);
    for r in 0..n {
        let (b, p) = (base.row(r).transpose(), patched.row(r).transpose());
        let (tb, tp) = (top_indices(b.as_view(), k), top_indices(p.as_view(), k));
        matches += (tb[0] == tp[0]) as usize;
        overlap += tb.iter().filter(|i| tp.contains(i)).count() as f64 / k as f64;
        div += jsd(&softmax(b.as_view()), &softmax(p.as_view()));
    }
    let nf = n as f64;
    Ok(PatchReport { samples: n, argmax_match: matches as f64 / nf, top10_overlap: overlap / nf, jsd: div / nf })
}

/// Samples `n` rows without replacement, then compares `U f` with
/// `U decode(encode(f))` under the eval-mode model.
pub fn activation_patch(
    representations: &DMatrix<f64>,
    unembedding: &DMatrix<f64>,
    model: &DictModel,
    n: usize,
    seed: u64,
) -> Result<PatchReport> {
    let rows = representations.nrows();
    if n == 0 || n > rows {
        return Err(Error::InvalidArgument(format!("cannot sample {n} of {rows} rows")));
    }
    if unembedding.ncols() != representations.ncols() {
        return Err(Error::Dimension(format!(
            "unembedding has {} columns, representations {}",
            unembedding.ncols(),
            representations.ncols()
        )));
    }
    let mut idx = sample(&mut seeded(seed), rows, n).into_vec();
    idx.sort_unstable();
    let f = representations.select_rows(idx.iter());
    let rec = model.reconstruct(&f)?;
    patch_metrics(&(f * unembedding.transpose()), &(rec * unembedding.transpose()))
}

/// [`activation_patch`] over a shard carrying its own unembedding block.
pub fn activation_patch_shard(
    shard: &crate::io::ActivationShard,
    model: &DictModel,
    n: usize,
    seed: u64,
) -> Result<PatchReport> {
    let u = shard.unembedding_matrix().ok_or(Error::MissingUnembedding)?;
    activation_patch(&shard.to_matrix(), &u, model, n, seed)
}
