//! Forward pass with cached intermediates, and its backward pass.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use super::{DictModel, Mode, ModelKind, Norm};
use crate::error::{Error, Result};
use crate::rng::seeded;

/// Normalization intermediates needed by the backward pass.
#[derive(Debug, Clone)]
pub(crate) enum NormCache {
    Identity,
    /// Layer/group norm: one inverse std per (row, group), groups contiguous.
    Rows {
        normed: DMatrix<f64>,
        inv_std: DMatrix<f64>,
        group_size: usize,
    },
    /// Batch norm with batch statistics.
    Columns {
        normed: DMatrix<f64>,
        inv_std: DVector<f64>,
        mean: DVector<f64>,
        var: DVector<f64>,
    },
    /// Batch norm with running statistics (a fixed affine map per column).
    Fixed {
        normed: DMatrix<f64>,
        inv_std: DVector<f64>,
    },
    /// Dropout: keep-mask already divided by `1 - p`.
    Mask(DMatrix<f64>),
}

impl NormCache {
    fn normed(&self) -> Option<&DMatrix<f64>> {
        match self {
            NormCache::Rows { normed, .. } | NormCache::Columns { normed, .. } | NormCache::Fixed { normed, .. } => {
                Some(normed)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct EncodeTrace {
    pub norm: NormCache,
    /// SAE gate: entries of the pre-activation passed through.
    pub gate: Option<Vec<bool>>,
    pub z: DMatrix<f64>,
}

impl EncodeTrace {
    /// Batch mean and biased variance, present for batch norm in training mode.
    pub fn batch_moments(&self) -> Option<(&DVector<f64>, &DVector<f64>)> {
        match &self.norm {
            NormCache::Columns { mean, var, .. } => Some((mean, var)),
            _ => None,
        }
    }
}

pub(crate) fn pre_activation(model: &DictModel, f: &DMatrix<f64>) -> DMatrix<f64> {
    let mut u = f * model.w_enc.transpose();
    for mut row in u.row_iter_mut() {
        row += model.b_enc.transpose();
    }
    u
}

pub(crate) fn decode(model: &DictModel, z: &DMatrix<f64>) -> DMatrix<f64> {
    let mut r = z * model.w_dec.transpose();
    for mut row in r.row_iter_mut() {
        row += model.b_dec.transpose();
    }
    r
}

pub(crate) fn encode(model: &DictModel, f: &DMatrix<f64>, mode: Mode) -> Result<EncodeTrace> {
    let u = pre_activation(model, f);
    match model.kind {
        ModelKind::Conca => {
            let (mut z, norm) = normalize(model, u, mode)?;
            if let (Some(a), Some(_)) = (&model.affine, norm.normed()) {
                for mut row in z.row_iter_mut() {
                    row.component_mul_assign(&a.scale.transpose());
                    row += a.shift.transpose();
                }
            }
            Ok(EncodeTrace { norm, gate: None, z })
        }
        ModelKind::SaeReluPanneal => {
            let gate: Vec<bool> = u.iter().map(|&v| v > 0.0).collect();
            Ok(gated(u, gate))
        }
        ModelKind::SaeTopk { k } => {
            let (b, d) = u.shape();
            let mut gate = vec![false; b * d];
            let mut idx: Vec<usize> = Vec::with_capacity(d);
            for r in 0..b {
                idx.clear();
                idx.extend(0..d);
                let key = |&c: &usize| (u[(r, c)], c);
                select_top(&mut idx, k, key);
                for &c in &idx[..k] {
                    gate[c * b + r] = true;
                }
            }
            Ok(gated(u, gate))
        }
        ModelKind::SaeBatchTopk { k } => {
            let (b, d) = u.shape();
            let keep = (k * b).min(b * d);
            // flattened in row-major order so lower (row, col) wins ties
            let mut idx: Vec<usize> = (0..b * d).collect();
            let key = |&i: &usize| (u[(i / d, i % d)], i);
            select_top(&mut idx, keep, key);
            let mut gate = vec![false; b * d];
            for &i in &idx[..keep] {
                gate[(i % d) * b + i / d] = true;
            }
            Ok(gated(u, gate))
        }
    }
}

/// Moves the `k` largest keys (value descending, then index ascending) to
/// the front of `idx`.
fn select_top<F: Fn(&usize) -> (f64, usize)>(idx: &mut [usize], k: usize, key: F) {
    if k == 0 || k >= idx.len() {
        return;
    }
    idx.select_nth_unstable_by(k - 1, |a, b| {
        let (va, ia) = key(a);
        let (vb, ib) = key(b);
        vb.total_cmp(&va).then(ia.cmp(&ib))
    });
}

/// `gate` is in column-major order, matching nalgebra storage.
fn gated(u: DMatrix<f64>, gate: Vec<bool>) -> EncodeTrace {
    let mut z = u;
    for (v, &g) in z.as_mut_slice().iter_mut().zip(&gate) {
        if !g {
            *v = 0.0;
        }
    }
    EncodeTrace { norm: NormCache::Identity, gate: Some(gate), z }
}

fn normalize(model: &DictModel, u: DMatrix<f64>, mode: Mode) -> Result<(DMatrix<f64>, NormCache)> {
    let (b, d) = u.shape();
    match model.norm {
        Norm::None => Ok((u, NormCache::Identity)),
        Norm::Layer { eps } => Ok(row_norm(u, 1, eps)),
        Norm::Group { groups, eps } => Ok(row_norm(u, groups, eps)),
        Norm::Batch { eps, .. } => match mode {
            Mode::Train { .. } => {
                let mean = DVector::from_iterator(d, u.column_iter().map(|c| c.mean()));
                let var = DVector::from_iterator(
                    d,
                    u.column_iter().zip(mean.iter()).map(|(c, &m)| c.map(|v| (v - m).powi(2)).mean()),
                );
                let inv_std = var.map(|v| 1.0 / (v + eps).sqrt());
                let normed = DMatrix::from_fn(b, d, |r, c| (u[(r, c)] - mean[c]) * inv_std[c]);
                Ok((normed.clone(), NormCache::Columns { normed, inv_std, mean, var }))
            }
            Mode::Eval => {
                let stats = model.running.as_ref().ok_or(Error::UninitializedStatistics)?;
                let inv_std = stats.var.map(|v| 1.0 / (v + eps).sqrt());
                let normed = DMatrix::from_fn(b, d, |r, c| (u[(r, c)] - stats.mean[c]) * inv_std[c]);
                Ok((normed.clone(), NormCache::Fixed { normed, inv_std }))
            }
        },
        Norm::Dropout { p } => match mode {
            Mode::Eval => Ok((u, NormCache::Identity)),
            Mode::Train { dropout_seed } => {
                let mut rng = seeded(dropout_seed);
                let keep = 1.0 / (1.0 - p);
                let mask = DMatrix::from_fn(b, d, |_, _| if rng.random::<f64>() < p { 0.0 } else { keep });
                Ok((u.component_mul(&mask), NormCache::Mask(mask)))
            }
        },
    }
}

fn row_norm(u: DMatrix<f64>, groups: usize, eps: f64) -> (DMatrix<f64>, NormCache) {
    let (b, d) = u.shape();
    let size = d / groups;
    let mut normed = u;
    let mut inv_std = DMatrix::zeros(b, groups);
    for r in 0..b {
        for g in 0..groups {
            let cols = g * size..(g + 1) * size;
            let mean = cols.clone().map(|c| normed[(r, c)]).sum::<f64>() / size as f64;
            let var = cols.clone().map(|c| (normed[(r, c)] - mean).powi(2)).sum::<f64>() / size as f64;
            let s = 1.0 / (var + eps).sqrt();
            inv_std[(r, g)] = s;
            for c in cols {
                normed[(r, c)] = (normed[(r, c)] - mean) * s;
            }
        }
    }
    (normed.clone(), NormCache::Rows { normed, inv_std, group_size: size })
}

/// Gradients of the encoder-side parameters.
pub(crate) struct EncodeGrad {
    pub du: DMatrix<f64>,
    pub scale: Option<DVector<f64>>,
    pub shift: Option<DVector<f64>>,
}

/// Back-propagates `dz = ∂L/∂ẑ` to the pre-activation and affine parameters.
pub(crate) fn encode_backward(model: &DictModel, trace: &EncodeTrace, dz: &DMatrix<f64>) -> EncodeGrad {
    if let Some(gate) = &trace.gate {
        let mut du = dz.clone();
        for (v, &g) in du.as_mut_slice().iter_mut().zip(gate) {
            if !g {
                *v = 0.0;
            }
        }
        return EncodeGrad { du, scale: None, shift: None };
    }
    let (b, d) = dz.shape();
    let (dn, scale, shift) = match (&model.affine, trace.norm.normed()) {
        (Some(a), Some(n)) => {
            let dscale = DVector::from_fn(d, |c, _| dz.column(c).dot(&n.column(c)));
            let dshift = DVector::from_fn(d, |c, _| dz.column(c).sum());
            let mut dn = dz.clone();
            for mut row in dn.row_iter_mut() {
                row.component_mul_assign(&a.scale.transpose());
            }
            (dn, Some(dscale), Some(dshift))
        }
        _ => (dz.clone(), None, None),
    };
    let du = match &trace.norm {
        NormCache::Identity => dn,
        NormCache::Mask(mask) => dn.component_mul(mask),
        NormCache::Fixed { inv_std, .. } => DMatrix::from_fn(b, d, |r, c| dn[(r, c)] * inv_std[c]),
        NormCache::Rows { normed, inv_std, group_size } => {
            let size = *group_size;
            let mut du = DMatrix::zeros(b, d);
            for r in 0..b {
                for g in 0..inv_std.ncols() {
                    let cols = g * size..(g + 1) * size;
                    let mean_dn = cols.clone().map(|c| dn[(r, c)]).sum::<f64>() / size as f64;
                    let mean_dnn = cols.clone().map(|c| dn[(r, c)] * normed[(r, c)]).sum::<f64>() / size as f64;
                    let s = inv_std[(r, g)];
                    for c in cols {
                        du[(r, c)] = s * (dn[(r, c)] - mean_dn - normed[(r, c)] * mean_dnn);
                    }
                }
            }
            du
        }
        NormCache::Columns { normed, inv_std, .. } => {
            let mut du = DMatrix::zeros(b, d);
            for c in 0..d {
                let col = dn.column(c);
                let ncol = normed.column(c);
                let mean_dn = col.mean();
                let mean_dnn = col.dot(&ncol) / b as f64;
                for r in 0..b {
                    du[(r, c)] = inv_std[c] * (col[r] - mean_dn - ncol[r] * mean_dnn);
                }
            }
            du
        }
    };
    EncodeGrad { du, scale, shift }
}
