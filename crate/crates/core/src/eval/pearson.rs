use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sample Pearson correlation. `degenerate` is set, and `value` is 0, when
/// either input is constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pearson {
    pub value: f64,
    pub degenerate: bool,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<Pearson> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!("pearson inputs have lengths {} and {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::InsufficientSamples("pearson needs at least two points".into()));
    }
    Ok(pearson_iter(x.iter().copied(), y.iter().copied(), x.len()))
}

/// Two-pass Pearson over equal-length iterators of known length `n`.
pub(crate) fn pearson_iter<I, J>(x: I, y: J, n: usize) -> Pearson
where
    I: Iterator<Item = f64> + Clone,
    J: Iterator<Item = f64> + Clone,
{
    let nf = n as f64;
    let mx = x.clone().sum::<f64>() / nf;
    let my = y.clone().sum::<f64>() / nf;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Pearson { value: 0.0, degenerate: true };
    }
    Pearson { value: (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0), degenerate: false }
}
