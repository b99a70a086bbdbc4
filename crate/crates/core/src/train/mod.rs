//! Mini-batch training of dictionary models.
//!
//! ConCA minimizes `E[‖f̂ − f‖² + α·‖g(ẑ)‖₁]`; the p-annealing SAE minimizes
//! `MSE + c(t)·Σ|ẑ|^p(t)`; the top-k kinds minimize MSE alone. All use Adam
//! with a linear learning-rate warmup and seeded per-epoch shuffling.

mod adam;
mod objective;

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dict::{DictModel, Mode, ModelKind, Norm, RunningStats};
use crate::error::{Error, Result};
use crate::io::ActivationShard;
use crate::rng::{derive_seed, seeded};

pub use adam::Adam;
pub use objective::{objective, objective_gradient, LossParts, ParamGrad, Penalty};

/// Sparsity schedule of the p-annealing SAE: the coefficient ramps linearly
/// from 0 to `initial_coeff` over `warmup_steps`, after which `p` moves
/// linearly from `p_start` to `p_end` over the remaining steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PAnneal {
    pub warmup_steps: usize,
    pub initial_coeff: f64,
    pub p_start: f64,
    pub p_end: f64,
}

impl Default for PAnneal {
    fn default() -> Self {
        Self { warmup_steps: 400, initial_coeff: 0.1, p_start: 1.0, p_end: 0.5 }
    }
}

impl PAnneal {
    pub fn coeff_at(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            self.initial_coeff
        } else {
            self.initial_coeff * step as f64 / self.warmup_steps as f64
        }
    }

    pub fn p_at(&self, step: usize, total_steps: usize) -> f64 {
        if step <= self.warmup_steps {
            return self.p_start;
        }
        let span = total_steps.saturating_sub(1 + self.warmup_steps).max(1);
        let frac = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        self.p_start + (self.p_end - self.p_start) * frac
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    pub alpha: f64,
    pub panneal: PAnneal,
    pub seed: u64,
    /// Clamp applied to every input activation before training.
    pub clamp: Option<(f64, f64)>,
    /// 0 disables checkpoint callbacks.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    /// The full-scale recipe: 20k steps of batch 10k, lr 1e-4 warmed over
    /// 200 steps, α = 1e-4.
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_size: 10_000,
            lr: 1e-4,
            warmup_steps: 200,
            alpha: 1e-4,
            panneal: PAnneal::default(),
            seed: 0,
            clamp: None,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// Reduced recipe used on synthetic shards: 6k steps, batch 1024, lr 1e-2.
    pub fn desk() -> Self {
        Self { steps: 6_000, batch_size: 1_024, lr: 1e-2, ..Self::default() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.steps == 0 {
            problems.push("steps must be > 0".to_string());
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be > 0".to_string());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            problems.push(format!("lr {} must be positive", self.lr));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            problems.push(format!("alpha {} must be >= 0", self.alpha));
        }
        let pa = &self.panneal;
        if !(pa.p_end > 0.0 && pa.p_end <= pa.p_start) {
            problems.push(format!("panneal p_end {} must lie in (0, p_start = {}]", pa.p_end, pa.p_start));
        }
        if pa.initial_coeff < 0.0 {
            problems.push("panneal initial_coeff must be >= 0".to_string());
        }
        if let Some((lo, hi)) = self.clamp {
            if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
                problems.push(format!("clamp range [{lo}, {hi}] is empty"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }

    /// Learning rate at `step`: `lr · step / warmup` during warmup, `lr` after.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            self.lr * step as f64 / self.warmup_steps as f64
        } else {
            self.lr
        }
    }

    pub fn penalty_at(&self, kind: ModelKind, step: usize) -> Penalty {
        match kind {
            ModelKind::Conca => Penalty::SurrogateL1 { weight: self.alpha },
            ModelKind::SaeReluPanneal => {
                Penalty::Power { coeff: self.panneal.coeff_at(step), p: self.panneal.p_at(step, self.steps) }
            }
            ModelKind::SaeTopk { .. } | ModelKind::SaeBatchTopk { .. } => Penalty::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub mse: f64,
    pub sparsity: f64,
    pub total: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub records: Vec<TraceRecord>,
}

impl LossTrace {
    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// Mean of the last `n` records (or all, if fewer).
    pub fn tail_mean(&self, n: usize) -> Option<TraceRecord> {
        let tail = &self.records[self.records.len().saturating_sub(n)..];
        let k = tail.len() as f64;
        let last = tail.last()?;
        Some(TraceRecord {
            step: last.step,
            mse: tail.iter().map(|r| r.mse).sum::<f64>() / k,
            sparsity: tail.iter().map(|r| r.sparsity).sum::<f64>() / k,
            total: tail.iter().map(|r| r.total).sum::<f64>() / k,
            lr: last.lr,
        })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_csv(path, &self.records)
    }
}

/// Applies a clamp to every entry of `data`.
pub fn clamp_inputs(data: &DMatrix<f64>, clamp: Option<(f64, f64)>) -> DMatrix<f64> {
    match clamp {
        Some((lo, hi)) => data.map(|v| v.clamp(lo, hi)),
        None => data.clone(),
    }
}

pub fn train_dict(model: DictModel, shard: &ActivationShard, config: &TrainConfig) -> Result<(DictModel, LossTrace)> {
    train_dict_matrix(model, &shard.to_matrix(), config)
}

pub fn train_dict_matrix(
    model: DictModel,
    data: &DMatrix<f64>,
    config: &TrainConfig,
) -> Result<(DictModel, LossTrace)> {
    train_dict_with(model, data, config, |_, _| Ok(()))
}

/// Trains `model` on the rows of `data`, calling `on_checkpoint` every
/// `checkpoint_every` steps and once more at the end.
pub fn train_dict_with(
    mut model: DictModel,
    data: &DMatrix<f64>,
    config: &TrainConfig,
    mut on_checkpoint: impl FnMut(usize, &DictModel) -> Result<()>,
) -> Result<(DictModel, LossTrace)> {
    config.validate()?;
    model.validate()?;
    if data.ncols() != model.m() {
        return Err(Error::Dimension(format!("shard has {} columns, model m = {}", data.ncols(), model.m())));
    }
    if data.nrows() == 0 {
        return Err(Error::InsufficientSamples("training shard is empty".into()));
    }
    let data = clamp_inputs(data, config.clamp);
    let n = data.nrows();
    let batch = config.batch_size.min(n);
    let mut rng = seeded(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;

    let mut adam = Adam::new(model.params().iter().map(|p| p.len()));
    let mut trace = LossTrace { records: Vec::with_capacity(config.steps) };
    let mut rows = DMatrix::zeros(batch, model.m());
    for step in 0..config.steps {
        if cursor + batch > n {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        for (i, &r) in order[cursor..cursor + batch].iter().enumerate() {
            rows.row_mut(i).copy_from(&data.row(r));
        }
        cursor += batch;

        let lr = config.lr_at(step);
        let penalty = config.penalty_at(model.kind, step);
        let mode = Mode::Train { dropout_seed: derive_seed(config.seed, step as u64) };
        let (parts, grad, enc) = objective::objective_gradient_traced(&model, &rows, penalty, mode)?;
        let grad_finite = grad.tensors.iter().flatten().all(|g| g.is_finite());
        if !parts.is_finite() || !grad_finite {
            return Err(Error::NonFiniteLoss {
                step,
                detail: format!(
                    "mse={} sparsity={} total={} finite_grad={grad_finite}",
                    parts.mse, parts.sparsity, parts.total
                ),
            });
        }
        trace.records.push(TraceRecord { step, mse: parts.mse, sparsity: parts.sparsity, total: parts.total, lr });
        adam.step(model.params_mut(), &grad.tensors, lr);

        if let (Norm::Batch { momentum, .. }, Some((mean, var))) = (model.norm, enc.batch_moments()) {
            let d = model.d_feat();
            let unbias = if batch > 1 { batch as f64 / (batch as f64 - 1.0) } else { 1.0 };
            let stats = model.running.get_or_insert_with(|| RunningStats {
                mean: nalgebra::DVector::zeros(d),
                var: nalgebra::DVector::from_element(d, 1.0),
            });
            stats.mean = &stats.mean * (1.0 - momentum) + mean * momentum;
            stats.var = &stats.var * (1.0 - momentum) + var * (momentum * unbias);
        }

        let done = step + 1;
        if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && done != config.steps {
            on_checkpoint(done, &model)?;
        }
    }
    on_checkpoint(config.steps, &model)?;
    Ok((model, trace))
}

/// Eval-mode reconstruction error and unweighted L1 sparsity over a shard.
///
/// `sparsity` is `mean_b Σ_d |g(ẑ)|` for ConCA and `mean_b Σ_d |ẑ|` for
/// the SAE kinds; `total = mse + alpha · sparsity`.
pub fn loss_eval(model: &DictModel, data: &DMatrix<f64>, alpha: f64) -> Result<LossParts> {
    const CHUNK: usize = 4096;
    let n = data.nrows();
    if n == 0 {
        return Err(Error::InsufficientSamples("empty evaluation shard".into()));
    }
    let penalty = match model.kind {
        ModelKind::Conca => Penalty::SurrogateL1 { weight: alpha },
        _ => Penalty::Power { coeff: alpha, p: 1.0 },
    };
    let (mut mse, mut sparsity) = (0.0, 0.0);
    let mut start = 0;
    while start < n {
        let len = CHUNK.min(n - start);
        let rows = data.rows(start, len).into_owned();
        let parts = objective(model, &rows, penalty, Mode::Eval)?;
        mse += parts.mse * len as f64;
        sparsity += parts.sparsity * len as f64;
        start += len;
    }
    let (mse, sparsity) = (mse / n as f64, sparsity / n as f64);
    Ok(LossParts { mse, sparsity, total: mse + alpha * sparsity })
}
