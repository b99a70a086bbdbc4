use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// `columns[i]` is the column matched to row `i`.
    pub columns: Vec<usize>,
    pub total: f64,
}

/// One-to-one assignment of every row to a distinct column maximizing the
/// summed profit. Needs `rows ≤ cols`; columns left over act as zero-profit
/// padding. Solved as min-cost on `max(R) − R` by shortest augmenting paths
/// with potentials, `O(rows² · cols)`.
pub fn hungarian(profit: &[Vec<f64>]) -> Result<Assignment> {
    let n = profit.len();
    if n == 0 {
        return Ok(Assignment { columns: Vec::new(), total: 0.0 });
    }
    let m = profit[0].len();
    if profit.iter().any(|r| r.len() != m) {
        return Err(Error::Dimension("profit rows have unequal lengths".into()));
    }
    if m < n {
        return Err(Error::InvalidArgument(format!("{n} concepts but only {m} features")));
    }
    if profit.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "assignment profit".into(), index: 0 });
    }
    let top = profit.iter().flatten().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let cost = |i: usize, j: usize| top - profit[i][j];

    // 1-based rows and columns, index 0 is the virtual root
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut row_of = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut columns = vec![0; n];
    for j in 1..=m {
        if row_of[j] > 0 {
            columns[row_of[j] - 1] = j - 1;
        }
    }
    let total = columns.iter().enumerate().map(|(i, &j)| profit[i][j]).sum();
    Ok(Assignment { columns, total })
}
