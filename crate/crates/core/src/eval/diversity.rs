//! Diversity of output-embedding differences: greedy LU pivot selection and
//! the singular spectrum of the chosen directions.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

pub const RANK_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    /// Unembedding row used as the reference `g(y_0)`, when known.
    pub reference: Option<usize>,
    /// Selected rows, as unembedding row indices (or difference-row indices
    /// for [`diversity_from_differences`]).
    pub selected_indices: Vec<usize>,
    pub singular_values: Vec<f64>,
    pub numerical_rank: usize,
}

/// LU with partial pivoting over the rows of `a`: at column `j` the
/// remaining row with the largest `|a[r, j]|` is chosen (lowest index on
/// ties) and eliminated from the others. Returns the pivot order, at most
/// `min(rows, cols, count)` long.
pub fn lu_pivot_order(a: &DMatrix<f64>, count: usize) -> Vec<usize> {
    let (n, m) = a.shape();
    let mut work = a.clone();
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut order = Vec::with_capacity(count.min(n).min(m));
    for j in 0..m {
        if order.len() == count || remaining.is_empty() {
            break;
        }
        let (pos, &piv) = remaining
            .iter()
            .enumerate()
            .fold(None, |best: Option<(usize, &usize)>, (p, r)| match best {
                Some((_, b)) if work[(*b, j)].abs() >= work[(*r, j)].abs() => best,
                _ => Some((p, r)),
            })
            .unwrap();
        remaining.remove(pos);
        order.push(piv);
        let pv = work[(piv, j)];
        if pv == 0.0 {
            continue;
        }
        let prow = work.row(piv).into_owned();
        for &r in &remaining {
            let factor = work[(r, j)] / pv;
            if factor != 0.0 {
                for c in j..m {
                    work[(r, c)] -= factor * prow[c];
                }
            }
        }
    }
    order
}

fn spectrum(selected: &DMatrix<f64>) -> (Vec<f64>, usize) {
    let mut sv: Vec<f64> = selected.clone().singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let top = sv.first().copied().unwrap_or(0.0);
    let rank = sv.iter().filter(|&&s| top > 0.0 && s > RANK_THRESHOLD * top).count();
    (sv, rank)
}

/// Greedy selection of `select` rows of a difference matrix and their
/// singular spectrum.
pub fn diversity_from_differences(diffs: &DMatrix<f64>, select: usize) -> Result<DiversityReport> {
    if select == 0 || select > diffs.nrows() || select > diffs.ncols() {
        return Err(Error::InvalidArgument(format!(
            "select = {select} must lie in [1, min({}, {})]",
            diffs.nrows(),
            diffs.ncols()
        )));
    }
    let order = lu_pivot_order(diffs, select);
    let (singular_values, numerical_rank) = spectrum(&diffs.select_rows(order.iter()));
    Ok(DiversityReport { reference: None, selected_indices: order, singular_values, numerical_rank })
}

/// Differences `g(y_i) − g(y_ref)` for each candidate row, then greedy
/// selection. Reported indices refer to unembedding rows.
pub fn diversity_with_reference(
    unembedding: &DMatrix<f64>,
    reference: usize,
    candidates: &[usize],
    select: usize,
) -> Result<DiversityReport> {
    let vocab = unembedding.nrows();
    if reference >= vocab || candidates.iter().any(|&c| c >= vocab) {
        return Err(Error::InvalidArgument(format!("row index out of range for vocabulary {vocab}")));
    }
    let r = unembedding.row(reference);
    let mut diffs = unembedding.select_rows(candidates.iter());
    for mut row in diffs.row_iter_mut() {
        row -= r;
    }
    let mut rep = diversity_from_differences(&diffs, select)?;
    rep.selected_indices = rep.selected_indices.iter().map(|&i| candidates[i]).collect();
    rep.reference = Some(reference);
    Ok(rep)
}

/// Samples `pool` distinct rows; the first sampled row is the reference and
/// the rest are candidates.
pub fn diversity_diag(
    unembedding: &DMatrix<f64>,
    pool: usize,
    select: usize,
    ref_seed: u64,
) -> Result<DiversityReport> {
    let vocab = unembedding.nrows();
    if pool < 2 || pool > vocab {
        return Err(Error::InvalidArgument(format!("pool {pool} must lie in [2, {vocab}]")));
    }
    let idx = sample(&mut seeded(ref_seed), vocab, pool).into_vec();
    diversity_with_reference(unembedding, idx[0], &idx[1..], select)
}
