//! The reconstruction-plus-sparsity objective and its analytic gradient.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dict::forward::{self, EncodeTrace};
use crate::dict::{DictModel, Mode};
use crate::error::{Error, Result};

/// Sparsity penalty added to the reconstruction error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Penalty {
    /// Structural sparsity only (top-k kinds).
    None,
    /// `weight · mean_b Σ_d |g(ẑ)|` on the model's surrogate output.
    SurrogateL1 { weight: f64 },
    /// `coeff · mean_b Σ_d |ẑ|^p`.
    Power { coeff: f64, p: f64 },
}

/// Objective components for one batch. `sparsity` is unweighted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub mse: f64,
    pub sparsity: f64,
    pub total: f64,
}

impl LossParts {
    pub fn is_finite(&self) -> bool {
        self.mse.is_finite() && self.sparsity.is_finite() && self.total.is_finite()
    }
}

/// Gradient of the objective for every learnable tensor, in the order of
/// [`DictModel::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub tensors: Vec<Vec<f64>>,
}

impl ParamGrad {
    pub fn flat(&self) -> Vec<f64> {
        self.tensors.concat()
    }
}

impl DictModel {
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> =
            vec![self.w_enc.as_slice(), self.b_enc.as_slice(), self.w_dec.as_slice(), self.b_dec.as_slice()];
        if let Some(a) = &self.affine {
            out.push(a.scale.as_slice());
            out.push(a.shift.as_slice());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.param_slices_mut()
    }
}

/// Mean over rows of the row-wise sum of squared entries.
pub(crate) fn mean_row_sq(err: &DMatrix<f64>) -> f64 {
    err.iter().map(|v| v * v).sum::<f64>() / err.nrows() as f64
}

fn penalty_value(model: &DictModel, z: &DMatrix<f64>, penalty: Penalty) -> (f64, f64) {
    let b = z.nrows() as f64;
    match penalty {
        Penalty::None => (z.iter().map(|v| v.abs()).sum::<f64>() / b, 0.0),
        Penalty::SurrogateL1 { weight } => {
            let s = z.iter().map(|&v| model.surrogate.value(v).abs()).sum::<f64>() / b;
            (s, weight * s)
        }
        Penalty::Power { coeff, p } => {
            let s = z.iter().map(|&v| if v == 0.0 { 0.0 } else { v.abs().powf(p) }).sum::<f64>() / b;
            (s, coeff * s)
        }
    }
}

/// Evaluates the objective without gradients.
pub fn objective(model: &DictModel, f: &DMatrix<f64>, penalty: Penalty, mode: Mode) -> Result<LossParts> {
    if f.ncols() != model.m() {
        return Err(Error::Dimension(format!("input has {} columns, model m = {}", f.ncols(), model.m())));
    }
    let trace = forward::encode(model, f, mode)?;
    let rec = forward::decode(model, &trace.z);
    let mse = mean_row_sq(&(rec - f));
    let (sparsity, weighted) = penalty_value(model, &trace.z, penalty);
    Ok(LossParts { mse, sparsity, total: mse + weighted })
}

/// Objective value plus the analytic gradient with respect to every parameter.
pub fn objective_gradient(
    model: &DictModel,
    f: &DMatrix<f64>,
    penalty: Penalty,
    mode: Mode,
) -> Result<(LossParts, ParamGrad)> {
    let (parts, grad, _) = objective_gradient_traced(model, f, penalty, mode)?;
    Ok((parts, grad))
}

pub(crate) fn objective_gradient_traced(
    model: &DictModel,
    f: &DMatrix<f64>,
    penalty: Penalty,
    mode: Mode,
) -> Result<(LossParts, ParamGrad, EncodeTrace)> {
    if f.ncols() != model.m() {
        return Err(Error::Dimension(format!("input has {} columns, model m = {}", f.ncols(), model.m())));
    }
    let b = f.nrows() as f64;
    let trace = forward::encode(model, f, mode)?;
    let z = &trace.z;
    let err = forward::decode(model, z) - f;
    let mse = mean_row_sq(&err);

    let drec = err * (2.0 / b);
    let w_dec = drec.transpose() * z;
    let b_dec = DVector::from_fn(model.m(), |j, _| drec.column(j).sum());
    let mut dz = &drec * &model.w_dec;
    let (sparsity, weighted) = match penalty {
        Penalty::SurrogateL1 { weight } => {
            let s = weight / b;
            let mut total = 0.0;
            for (d, &v) in dz.iter_mut().zip(z.iter()) {
                let (g, dg) = model.surrogate.value_and_derivative(v);
                total += g.abs();
                if g != 0.0 {
                    *d += s * g.signum() * dg;
                }
            }
            (total / b, weight * total / b)
        }
        Penalty::Power { coeff, p } => {
            let s = coeff * p / b;
            for (d, &v) in dz.iter_mut().zip(z.iter()) {
                if v != 0.0 {
                    *d += s * v.signum() * v.abs().powf(p - 1.0);
                }
            }
            penalty_value(model, z, penalty)
        }
        Penalty::None => penalty_value(model, z, penalty),
    };
    let enc = forward::encode_backward(model, &trace, &dz);
    let w_enc = enc.du.transpose() * f;
    let b_enc = DVector::from_fn(model.d_feat(), |c, _| enc.du.column(c).sum());

    let mut tensors = vec![
        w_enc.as_slice().to_vec(),
        b_enc.as_slice().to_vec(),
        w_dec.as_slice().to_vec(),
        b_dec.as_slice().to_vec(),
    ];
    if model.affine.is_some() {
        let d = model.d_feat();
        tensors.push(enc.scale.map_or_else(|| vec![0.0; d], |v| v.as_slice().to_vec()));
        tensors.push(enc.shift.map_or_else(|| vec![0.0; d], |v| v.as_slice().to_vec()));
    }
    Ok((LossParts { mse, sparsity, total: mse + weighted }, ParamGrad { tensors }, trace))
}
