//! Linear concept dictionaries (ConCA) and sparse-autoencoder baselines.
//!
//! Every model shares the affine encoder/decoder pair
//!
//! ```text
//! ẑ = R(W_e f + b_e)        f̂ = W_d ẑ + b_d
//! ```
//!
//! and differs in `R`. ConCA uses a normalization module (layer, batch,
//! group norm or dropout) with no nonlinearity; sparsity is then imposed on a
//! surrogate-exponential transform `g(ẑ)`. The SAE baselines replace `R` with
//! ReLU, per-sample top-k or batch top-k.

mod checkpoint;
pub(crate) mod forward;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelKind {
    Conca,
    SaeReluPanneal,
    SaeTopk { k: usize },
    SaeBatchTopk { k: usize },
}

impl ModelKind {
    pub fn is_sae(&self) -> bool {
        !matches!(self, ModelKind::Conca)
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Conca => "conca",
            ModelKind::SaeReluPanneal => "sae_relu_panneal",
            ModelKind::SaeTopk { .. } => "sae_topk",
            ModelKind::SaeBatchTopk { .. } => "sae_batch_topk",
        }
    }
}

/// The regularization module applied after the encoder's affine map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Norm {
    None,
    Layer { eps: f64 },
    Group { groups: usize, eps: f64 },
    Batch { eps: f64, momentum: f64 },
    Dropout { p: f64 },
}

impl Norm {
    pub const DEFAULT_EPS: f64 = 1e-5;
    pub const DEFAULT_MOMENTUM: f64 = 0.1;

    pub fn layer() -> Self {
        Norm::Layer { eps: Self::DEFAULT_EPS }
    }

    pub fn group(groups: usize) -> Self {
        Norm::Group { groups, eps: Self::DEFAULT_EPS }
    }

    pub fn batch() -> Self {
        Norm::Batch { eps: Self::DEFAULT_EPS, momentum: Self::DEFAULT_MOMENTUM }
    }

    pub fn dropout(p: f64) -> Self {
        Norm::Dropout { p }
    }

    /// Whether the norm carries learnable per-feature scale and shift.
    pub fn supports_affine(&self) -> bool {
        matches!(self, Norm::Layer { .. } | Norm::Group { .. } | Norm::Batch { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Norm::None => "none",
            Norm::Layer { .. } => "layer",
            Norm::Group { .. } => "group",
            Norm::Batch { .. } => "batch",
            Norm::Dropout { .. } => "dropout",
        }
    }
}

/// Surrogate for the exponential that maps features back toward the
/// probability domain before the sparsity penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Surrogate {
    None,
    Selu,
    Elu,
    Softplus,
    ExpClamped { lo: f64, hi: f64 },
}

impl Surrogate {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Surrogate::None => x,
            Surrogate::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA * x
                } else {
                    SELU_LAMBDA * SELU_ALPHA * x.exp_m1()
                }
            }
            Surrogate::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Surrogate::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
            Surrogate::ExpClamped { lo, hi } => x.clamp(lo, hi).exp(),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Surrogate::None => 1.0,
            Surrogate::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA
                } else {
                    SELU_LAMBDA * SELU_ALPHA * x.exp()
                }
            }
            Surrogate::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            Surrogate::Softplus => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
            Surrogate::ExpClamped { lo, hi } => {
                if x > lo && x < hi {
                    x.exp()
                } else {
                    0.0
                }
            }
        }
    }

    /// `(value(x), derivative(x))`, sharing the exponential where possible.
    pub fn value_and_derivative(&self, x: f64) -> (f64, f64) {
        match *self {
            Surrogate::Softplus => {
                let e = (-x.abs()).exp();
                let sig = if x >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
                (x.max(0.0) + e.ln_1p(), sig)
            }
            Surrogate::Selu if x <= 0.0 => {
                let e = x.exp();
                (SELU_LAMBDA * SELU_ALPHA * x.exp_m1(), SELU_LAMBDA * SELU_ALPHA * e)
            }
            Surrogate::Elu if x <= 0.0 => (x.exp_m1(), x.exp()),
            Surrogate::ExpClamped { lo, hi } => {
                let v = x.clamp(lo, hi).exp();
                (v, if x > lo && x < hi { v } else { 0.0 })
            }
            _ => (self.value(x), self.derivative(x)),
        }
    }

    pub fn apply(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        z.map(|v| self.value(v))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Surrogate::None => "none",
            Surrogate::Selu => "selu",
            Surrogate::Elu => "elu",
            Surrogate::Softplus => "softplus",
            Surrogate::ExpClamped { .. } => "exp_clamped",
        }
    }
}

/// Per-feature scale and shift applied after normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub scale: DVector<f64>,
    pub shift: DVector<f64>,
}

/// Exponential moving averages used by batch norm in eval mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: DVector<f64>,
    pub var: DVector<f64>,
}

/// Whether normalization uses batch statistics and dropout is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Training mode; the seed fixes the dropout mask for this batch.
    Train {
        dropout_seed: u64,
    },
}

/// Everything needed to build a fresh model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictConfig {
    pub kind: ModelKind,
    pub m: usize,
    pub d_feat: usize,
    pub norm: Norm,
    pub surrogate: Surrogate,
    /// Learnable scale/shift after layer, batch and group norm.
    #[serde(default = "default_true")]
    pub affine: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

impl DictConfig {
    pub fn conca(m: usize, d_feat: usize, norm: Norm, surrogate: Surrogate) -> Self {
        Self { kind: ModelKind::Conca, m, d_feat, norm, surrogate, affine: true, seed: 0 }
    }

    pub fn sae(kind: ModelKind, m: usize, d_feat: usize) -> Self {
        Self { kind, m, d_feat, norm: Norm::None, surrogate: Surrogate::None, affine: false, seed: 0 }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let problems = validate_parts(self.kind, self.m, self.d_feat, &self.norm, &self.surrogate);
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }
}

fn validate_parts(kind: ModelKind, m: usize, d_feat: usize, norm: &Norm, surrogate: &Surrogate) -> Vec<String> {
    let mut problems = Vec::new();
    if m == 0 {
        problems.push("m must be at least 1".to_string());
    }
    if d_feat == 0 {
        problems.push("d_feat must be at least 1".to_string());
    }
    match kind {
        ModelKind::Conca => {
            if matches!(surrogate, Surrogate::None) {
                problems.push("conca requires a surrogate activation".to_string());
            }
            if matches!(norm, Norm::None) {
                problems.push("conca requires a normalization".to_string());
            }
        }
        ModelKind::SaeTopk { k } | ModelKind::SaeBatchTopk { k } => {
            if k == 0 || k > d_feat {
                problems.push(format!("topk k={k} outside [1, {d_feat}]"));
            }
        }
        ModelKind::SaeReluPanneal => {}
    }
    if kind.is_sae() {
        if !matches!(norm, Norm::None) {
            problems.push(format!("{} takes no normalization", kind.name()));
        }
        if !matches!(surrogate, Surrogate::None) {
            problems.push(format!("{} takes no surrogate", kind.name()));
        }
    }
    match *norm {
        Norm::Layer { eps } | Norm::Batch { eps, .. } if eps <= 0.0 => {
            problems.push("norm eps must be positive".to_string())
        }
        Norm::Group { groups, eps } => {
            if groups == 0 || !d_feat.is_multiple_of(groups) {
                problems.push(format!("num_groups {groups} must divide d_feat {d_feat}"));
            }
            if eps <= 0.0 {
                problems.push("norm eps must be positive".to_string());
            }
        }
        Norm::Dropout { p } if !(0.0..1.0).contains(&p) => problems.push(format!("dropout p={p} outside [0, 1)")),
        _ => {}
    }
    if let Norm::Batch { momentum, .. } = *norm {
        if !(momentum > 0.0 && momentum <= 1.0) {
            problems.push(format!("batch-norm momentum {momentum} outside (0, 1]"));
        }
    }
    if let Surrogate::ExpClamped { lo, hi } = *surrogate {
        if !lo.is_finite() || !hi.is_finite() || lo >= hi {
            problems.push(format!("exp clamp range [{lo}, {hi}] is empty or infinite"));
        }
    }
    problems
}

/// A trained or freshly initialized dictionary model.
#[derive(Debug, Clone, PartialEq)]
pub struct DictModel {
    pub kind: ModelKind,
    pub norm: Norm,
    pub surrogate: Surrogate,
    /// `d_feat × m`
    pub w_enc: DMatrix<f64>,
    pub b_enc: DVector<f64>,
    /// `m × d_feat`
    pub w_dec: DMatrix<f64>,
    pub b_dec: DVector<f64>,
    pub affine: Option<Affine>,
    pub running: Option<RunningStats>,
}

/// Builds a model: encoder entries uniform on `(-1/√m, 1/√m)`, decoder the
/// encoder's transpose with unit-norm columns, zero biases.
pub fn init_model(config: &DictConfig) -> Result<DictModel> {
    config.validate()?;
    let (m, d) = (config.m, config.d_feat);
    let mut rng = seeded(config.seed);
    let bound = 1.0 / (m as f64).sqrt();
    let w_enc = DMatrix::from_fn(d, m, |_, _| rng.random_range(-bound..bound));
    let mut w_dec = w_enc.transpose();
    for mut col in w_dec.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 {
            col /= n;
        }
    }
    let affine = (config.affine && config.norm.supports_affine())
        .then(|| Affine { scale: DVector::from_element(d, 1.0), shift: DVector::zeros(d) });
    Ok(DictModel {
        kind: config.kind,
        norm: config.norm,
        surrogate: config.surrogate,
        w_enc,
        b_enc: DVector::zeros(d),
        w_dec,
        b_dec: DVector::zeros(m),
        affine,
        running: None,
    })
}

impl DictModel {
    pub fn m(&self) -> usize {
        self.w_enc.ncols()
    }

    pub fn d_feat(&self) -> usize {
        self.w_enc.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let (d, m) = (self.d_feat(), self.m());
        let mut problems = validate_parts(self.kind, m, d, &self.norm, &self.surrogate);
        if self.w_dec.shape() != (m, d) || self.b_enc.len() != d || self.b_dec.len() != m {
            problems.push("weight shapes are inconsistent".to_string());
        }
        if let Some(a) = &self.affine {
            if a.scale.len() != d || a.shift.len() != d {
                problems.push("affine parameters have wrong length".to_string());
            }
        }
        let finite = self.w_enc.iter().chain(self.w_dec.iter()).chain(self.b_enc.iter());
        if !finite.chain(self.b_dec.iter()).all(|v| v.is_finite()) {
            problems.push("weights contain non-finite values".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }

    fn check_input(&self, f: &DMatrix<f64>) -> Result<()> {
        if f.ncols() != self.m() {
            return Err(Error::Dimension(format!("input has {} columns, model expects m = {}", f.ncols(), self.m())));
        }
        Ok(())
    }

    /// Feature batch `ẑ` for a batch of representations (one per row).
    pub fn encode(&self, f: &DMatrix<f64>, mode: Mode) -> Result<DMatrix<f64>> {
        self.check_input(f)?;
        Ok(forward::encode(self, f, mode)?.z)
    }

    /// Affine reconstruction `W_d ẑ + b_d` for every row of `z`.
    pub fn decode(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if z.ncols() != self.d_feat() {
            return Err(Error::Dimension(format!(
                "features have {} columns, model has d_feat = {}",
                z.ncols(),
                self.d_feat()
            )));
        }
        Ok(forward::decode(self, z))
    }

    /// Elementwise `g(ẑ)`; identity for models without a surrogate.
    pub fn surrogate_apply(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        self.surrogate.apply(z)
    }

    /// `decode(encode(f))` in eval mode.
    pub fn reconstruct(&self, f: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let z = self.encode(f, Mode::Eval)?;
        self.decode(&z)
    }

    /// The features used for concept evaluation: `g(ẑ)` in eval mode, or
    /// `exp(clamp(ẑ, lo, hi))` when `exp_clamp` is given.
    pub fn eval_features(&self, f: &DMatrix<f64>, exp_clamp: Option<(f64, f64)>) -> Result<DMatrix<f64>> {
        let z = self.encode(f, Mode::Eval)?;
        Ok(match exp_clamp {
            Some((lo, hi)) => Surrogate::ExpClamped { lo, hi }.apply(&z),
            None => self.surrogate_apply(&z),
        })
    }

    /// Number of groups the feature vector splits into (1 unless group norm).
    pub fn feature_groups(&self) -> usize {
        match self.norm {
            Norm::Group { groups, .. } => groups,
            _ => 1,
        }
    }

    /// Mutable views of every learnable tensor, in a fixed order shared
    /// with the gradient container.
    pub(crate) fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.w_enc.as_mut_slice(),
            self.b_enc.as_mut_slice(),
            self.w_dec.as_mut_slice(),
            self.b_dec.as_mut_slice(),
        ];
        if let Some(a) = &mut self.affine {
            out.push(a.scale.as_mut_slice());
            out.push(a.shift.as_mut_slice());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn batch(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = seeded(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn surrogate_values() {
        assert_abs_diff_eq!(Surrogate::Softplus.value(0.0), 2f64.ln(), epsilon = 1e-15);
        assert_eq!(Surrogate::Selu.value(0.0), 0.0);
        assert_eq!(Surrogate::Elu.value(0.0), 0.0);
        let e = Surrogate::ExpClamped { lo: -20.0, hi: 20.0 };
        assert_eq!(e.value(25.0), 20f64.exp());
        assert_eq!(e.value(-30.0), (-20f64).exp());
    }

    #[test]
    fn surrogate_lower_bounds() {
        for x in [-1e3, -50.0, -3.0, -1e-3, 0.0, 2.0, 800.0] {
            assert!(Surrogate::Softplus.value(x) >= 0.0);
            assert!(Surrogate::Selu.value(x) >= -SELU_LAMBDA * SELU_ALPHA);
            assert!(Surrogate::Elu.value(x) >= -1.0);
        }
        assert!(Surrogate::Softplus.value(-30.0) > 0.0);
    }

    #[test]
    fn surrogate_derivatives_match_differences() {
        let h = 1e-6;
        for s in [Surrogate::Selu, Surrogate::Elu, Surrogate::Softplus, Surrogate::ExpClamped { lo: -3.0, hi: 3.0 }] {
            for x in [-2.5, -0.7, 0.4, 1.9] {
                let fd = (s.value(x + h) - s.value(x - h)) / (2.0 * h);
                assert_abs_diff_eq!(s.derivative(x), fd, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn init_is_deterministic_with_unit_decoder_columns() {
        let cfg = DictConfig::conca(6, 12, Norm::layer(), Surrogate::Softplus).with_seed(5);
        let a = init_model(&cfg).unwrap();
        assert_eq!(a, init_model(&cfg).unwrap());
        for col in a.w_dec.column_iter() {
            assert_abs_diff_eq!(col.norm(), 1.0, epsilon = 1e-10);
        }
        let b = init_model(&cfg.clone().with_seed(6)).unwrap();
        assert!((&a.w_enc - &b.w_enc).norm() > 0.0);
        let bound = 1.0 / 6f64.sqrt();
        assert!(a.w_enc.iter().all(|v| v.abs() < bound));
    }

    #[test]
    fn invalid_configs_list_every_problem() {
        let cfg = DictConfig {
            kind: ModelKind::Conca,
            m: 0,
            d_feat: 10,
            norm: Norm::None,
            surrogate: Surrogate::None,
            affine: true,
            seed: 0,
        };
        match cfg.validate() {
            Err(Error::InvalidConfig(p)) => assert_eq!(p.len(), 3, "{p:?}"),
            other => panic!("{other:?}"),
        }
        assert!(DictConfig::conca(4, 10, Norm::group(4), Surrogate::Elu).validate().is_err());
        assert!(DictConfig::sae(ModelKind::SaeTopk { k: 11 }, 4, 10).validate().is_err());
        assert!(DictConfig::conca(4, 8, Norm::dropout(1.0), Surrogate::Elu).validate().is_err());
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let mut cfg = DictConfig::conca(7, 16, Norm::layer(), Surrogate::Softplus).with_seed(1);
        cfg.affine = false;
        let model = init_model(&cfg).unwrap();
        let z = model.encode(&(batch(9, 7, 2) * 4.0), Mode::Eval).unwrap();
        for row in z.row_iter() {
            let mean = row.mean();
            let var = row.map(|v| (v - mean).powi(2)).mean();
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-6);
            assert_abs_diff_eq!(var, 1.0, epsilon = 1e-5);
        }
    }

    #[test]
    fn group_norm_with_one_group_equals_layer_norm() {
        let layer = init_model(&DictConfig::conca(5, 12, Norm::layer(), Surrogate::Elu).with_seed(3)).unwrap();
        let mut group = layer.clone();
        group.norm = Norm::group(1);
        let f = batch(6, 5, 4);
        let a = layer.encode(&f, Mode::Eval).unwrap();
        let b = group.encode(&f, Mode::Eval).unwrap();
        assert!((a - b).amax() < 1e-7);
    }

    #[test]
    fn topk_keeps_exactly_k_per_row() {
        let model = init_model(&DictConfig::sae(ModelKind::SaeTopk { k: 32 }, 16, 128).with_seed(2)).unwrap();
        let z = model.encode(&batch(10, 16, 8), Mode::Eval).unwrap();
        for row in z.row_iter() {
            assert_eq!(row.iter().filter(|&&v| v != 0.0).count(), 32);
        }
    }

    #[test]
    fn topk_ties_prefer_lower_index() {
        let mut model = init_model(&DictConfig::sae(ModelKind::SaeTopk { k: 2 }, 1, 4)).unwrap();
        model.w_enc = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 2.0, 2.0]);
        let z = model.encode(&DMatrix::from_element(1, 1, 1.0), Mode::Eval).unwrap();
        assert_eq!(z.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 2.0, 2.0, 0.0]);
    }

    #[test]
    fn batch_topk_matches_sort_oracle() {
        let model = init_model(&DictConfig::sae(ModelKind::SaeBatchTopk { k: 2 }, 5, 9).with_seed(4)).unwrap();
        let f = batch(3, 5, 9);
        let z = model.encode(&f, Mode::Eval).unwrap();
        assert_eq!(z.iter().filter(|&&v| v != 0.0).count(), 6);
        // oracle: sort all 27 pre-activations and keep the largest 6
        let pre = {
            let mut u = &f * model.w_enc.transpose();
            for mut row in u.row_iter_mut() {
                row += model.b_enc.transpose();
            }
            u
        };
        let mut all: Vec<f64> = pre.iter().copied().collect();
        all.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let cutoff = all[5];
        for (p, v) in pre.iter().zip(z.iter()) {
            if *p >= cutoff {
                assert_eq!(v, p);
            } else {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn eval_dropout_is_identity_and_batch_norm_needs_stats() {
        let mut cfg = DictConfig::conca(4, 8, Norm::dropout(0.5), Surrogate::Selu).with_seed(1);
        let model = init_model(&cfg).unwrap();
        let f = batch(3, 4, 1);
        let mut pre = &f * model.w_enc.transpose();
        for mut row in pre.row_iter_mut() {
            row += model.b_enc.transpose();
        }
        assert_eq!(model.encode(&f, Mode::Eval).unwrap(), pre);

        cfg.norm = Norm::batch();
        let bn = init_model(&cfg).unwrap();
        assert!(matches!(bn.encode(&f, Mode::Eval), Err(Error::UninitializedStatistics)));
        assert!(bn.encode(&f, Mode::Train { dropout_seed: 0 }).is_ok());
    }

    #[test]
    fn decode_of_zero_is_bias_and_identity_model_reconstructs() {
        let mut model = init_model(&DictConfig::conca(3, 3, Norm::dropout(0.0), Surrogate::Softplus)).unwrap();
        model.b_dec = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let rec = model.decode(&DMatrix::zeros(2, 3)).unwrap();
        for row in rec.row_iter() {
            assert_eq!(row.transpose(), model.b_dec);
        }

        let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 0.0, 1.0, -1.0, 1.0, 0.0, 3.0]);
        model.w_enc = a.clone();
        model.w_dec = a.try_inverse().unwrap();
        model.b_dec = DVector::zeros(3);
        let f = batch(5, 3, 11);
        assert!((model.reconstruct(&f).unwrap() - &f).amax() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let model = init_model(&DictConfig::conca(3, 6, Norm::layer(), Surrogate::Elu)).unwrap();
        assert!(matches!(model.encode(&DMatrix::zeros(2, 4), Mode::Eval), Err(Error::Dimension(_))));
        assert!(matches!(model.decode(&DMatrix::zeros(2, 5)), Err(Error::Dimension(_))));
    }
}
