//! Rank-based fraction of significant features between the two sides of a
//! counterfactual pair.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dict::DictModel;
use crate::error::{Error, Result};
use crate::probe::average_ranks;

pub const DEFAULT_THRESHOLDS: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];

/// Percentile ranks in `[0, 1]`: `(rank − 1) / (n − 1)` with averaged ties.
pub fn percentile_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    if n < 2 {
        return vec![0.0; n];
    }
    average_ranks(values).into_iter().map(|r| (r - 1.0) / (n - 1) as f64).collect()
}

/// Indices of the `k` largest values, ties to the lower index.
fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

fn fraction_single(zs: &[f64], zt: &[f64], k: usize, thresholds: &[f64]) -> f64 {
    let diff: Vec<f64> = zs.iter().zip(zt).map(|(a, b)| (a - b).abs()).collect();
    let sel = top_k(&diff, k);
    let (rs, rt) = (percentile_ranks(zs), percentile_ranks(zt));
    let total: f64 = thresholds
        .iter()
        .map(|&tau| sel.iter().filter(|&&i| (rs[i] - rt[i]).abs() > tau).count() as f64 / sel.len() as f64)
        .sum();
    total / thresholds.len() as f64
}

/// Fraction of the top-`k` most changed features whose percentile rank
/// moves by more than each threshold, averaged over thresholds. With
/// `groups > 1` the vectors are split into equal contiguous groups, each
/// scored with `k_g = max(1, k / groups)`, and the group scores averaged.
pub fn rank_fraction(zs: &[f64], zt: &[f64], k: usize, thresholds: &[f64], groups: usize) -> Result<f64> {
    let d = zs.len();
    if zt.len() != d {
        return Err(Error::Dimension(format!("pair vectors have lengths {d} and {}", zt.len())));
    }
    if k == 0 || k > d {
        return Err(Error::InvalidArgument(format!("k = {k} must lie in [1, {d}]")));
    }
    if thresholds.is_empty() {
        return Err(Error::InvalidArgument("threshold set is empty".into()));
    }
    if groups == 0 || !d.is_multiple_of(groups) {
        return Err(Error::InvalidArgument(format!("{groups} groups do not divide {d} features")));
    }
    if groups == 1 {
        return Ok(fraction_single(zs, zt, k, thresholds));
    }
    let size = d / groups;
    let kg = (k / groups).max(1).min(size);
    let total: f64 = (0..groups)
        .map(|g| {
            let r = g * size..(g + 1) * size;
            fraction_single(&zs[r.clone()], &zt[r], kg, thresholds)
        })
        .sum();
    Ok(total / groups as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankFractionReport {
    pub k: usize,
    pub thresholds: Vec<f64>,
    pub groups: usize,
    pub per_pair: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Scores every pair of representation rows `(a, b)` on the model's
/// evaluation features, grouping as the model's normalization does.
pub fn model_rank_fraction(
    model: &DictModel,
    representations: &DMatrix<f64>,
    pairs: &[(usize, usize)],
    k: usize,
    thresholds: &[f64],
    exp_clamp: Option<(f64, f64)>,
) -> Result<RankFractionReport> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no pairs to score".into()));
    }
    if let Some(&(a, b)) = pairs.iter().find(|&&(a, b)| a.max(b) >= representations.nrows()) {
        return Err(Error::InvalidArgument(format!("pair ({a}, {b}) out of range")));
    }
    let z = model.eval_features(representations, exp_clamp)?;
    let groups = model.feature_groups();
    let row = |i: usize| z.row(i).iter().copied().collect::<Vec<f64>>();
    let per_pair: Vec<f64> =
        pairs.iter().map(|&(a, b)| rank_fraction(&row(a), &row(b), k, thresholds, groups)).collect::<Result<_>>()?;
    let n = per_pair.len() as f64;
    let mean = per_pair.iter().sum::<f64>() / n;
    let std = (per_pair.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(RankFractionReport { k, thresholds: thresholds.to_vec(), groups, per_pair, mean, std })
}
