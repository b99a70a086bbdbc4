//! Toy next-token predictor `p(y | x) ∝ exp(f(x)ᵀ g(y))` with a linear `f`,
//! and the regression of its representations on true log-posteriors.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::ActivationShard;
use crate::rng::seeded;
use crate::train::{Adam, TrainConfig};
use crate::world::SyntheticDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorModel {
    /// `m × context_dim`.
    pub f_weights: DMatrix<f64>,
    pub f_bias: DVector<f64>,
    /// One row per class of `y`: the look-up table `g(y)`, `classes × m`.
    pub g_table: DMatrix<f64>,
}

/// Gradient of the mean cross-entropy, laid out like [`PredictorModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorGrad {
    pub f_weights: DMatrix<f64>,
    pub f_bias: DVector<f64>,
    pub g_table: DMatrix<f64>,
}

impl PredictorGrad {
    pub fn flat(&self) -> Vec<f64> {
        [self.f_weights.as_slice(), self.f_bias.as_slice(), self.g_table.as_slice()].concat()
    }
}

/// Row-wise softmax, stabilized by the row maximum.
pub fn softmax_rows(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = logits.clone();
    for mut row in p.row_iter_mut() {
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    p
}

impl PredictorModel {
    /// PyTorch-style uniform init: `±1/√fan_in` for `f`, `±1/√m` for `g`.
    pub fn init(context_dim: usize, m: usize, classes: usize, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let a = 1.0 / (context_dim.max(1) as f64).sqrt();
        let f_weights = DMatrix::from_fn(m, context_dim, |_, _| rng.random_range(-a..a));
        let f_bias = DVector::from_fn(m, |_, _| rng.random_range(-a..a));
        let b = 1.0 / (m as f64).sqrt();
        let g_table = DMatrix::from_fn(classes, m, |_, _| rng.random_range(-b..b));
        Self { f_weights, f_bias, g_table }
    }

    pub fn m(&self) -> usize {
        self.f_weights.nrows()
    }

    pub fn context_dim(&self) -> usize {
        self.f_weights.ncols()
    }

    pub fn classes(&self) -> usize {
        self.g_table.nrows()
    }

    fn check_input(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.context_dim() {
            return Err(Error::Dimension(format!(
                "context has {} columns, predictor expects {}",
                x.ncols(),
                self.context_dim()
            )));
        }
        Ok(())
    }

    /// Representations `f(x) = W x + c`, one row per sample.
    pub fn represent(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        let mut f = x * self.f_weights.transpose();
        for mut row in f.row_iter_mut() {
            row += self.f_bias.transpose();
        }
        Ok(f)
    }

    pub fn logits(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.represent(x)? * self.g_table.transpose())
    }

    pub fn predict_proba(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(softmax_rows(&self.logits(x)?))
    }

    pub fn accuracy(&self, x: &DMatrix<f64>, y: &[usize]) -> Result<f64> {
        let logits = self.logits(x)?;
        let hits = logits.row_iter().zip(y).filter(|(row, &t)| row.transpose().argmax().0 == t).count();
        Ok(hits as f64 / y.len().max(1) as f64)
    }

    /// Mean cross-entropy in nats.
    pub fn loss(&self, x: &DMatrix<f64>, y: &[usize]) -> Result<f64> {
        Ok(self.loss_gradient(x, y)?.0)
    }

    pub fn loss_gradient(&self, x: &DMatrix<f64>, y: &[usize]) -> Result<(f64, PredictorGrad)> {
        if x.nrows() != y.len() || y.is_empty() {
            return Err(Error::Dimension(format!("{} rows, {} targets", x.nrows(), y.len())));
        }
        if let Some(&t) = y.iter().find(|&&t| t >= self.classes()) {
            return Err(Error::InvalidArgument(format!("target {t} with {} classes", self.classes())));
        }
        let f = self.represent(x)?;
        let mut p = softmax_rows(&(&f * self.g_table.transpose()));
        let n = y.len() as f64;
        let loss = -y.iter().enumerate().map(|(r, &t)| p[(r, t)].max(f64::MIN_POSITIVE).ln()).sum::<f64>() / n;
        for (r, &t) in y.iter().enumerate() {
            p[(r, t)] -= 1.0;
        }
        p /= n;
        let g_table = p.transpose() * &f;
        let df = &p * &self.g_table;
        let f_weights = df.transpose() * x;
        let f_bias = DVector::from_fn(self.m(), |j, _| df.column(j).sum());
        Ok((loss, PredictorGrad { f_weights, f_bias, g_table }))
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.f_weights.as_mut_slice(), self.f_bias.as_mut_slice(), self.g_table.as_mut_slice()]
    }
}

impl TrainConfig {
    /// Predictor recipe for synthetic worlds: 2k Adam steps of batch 512 at
    /// lr 1e-2, no warmup.
    pub fn predictor_desk() -> Self {
        Self { steps: 2_000, batch_size: 512, lr: 1e-2, warmup_steps: 0, ..Self::default() }
    }
}

/// Result of [`train_predictor`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorFit {
    pub model: PredictorModel,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub train_accuracy: f64,
}

/// Fits the predictor by Adam on shuffled mini-batches of `(x, y)`.
pub fn train_predictor(data: &SyntheticDataset, m: usize, config: &TrainConfig) -> Result<PredictorFit> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InsufficientSamples("predictor needs at least one sample".into()));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("representation dimension must be >= 1".into()));
    }
    let x = data.context_matrix();
    let y = &data.targets;
    let classes = y.iter().max().map_or(1, |&c| c + 1);
    let mut model = PredictorModel::init(x.ncols(), m, classes, config.seed);
    let initial_loss = model.loss(&x, y)?;

    let n = x.nrows();
    let batch = config.batch_size.min(n);
    let mut rng = seeded(config.seed ^ 0x9e37_79b9);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut adam = Adam::new([m * x.ncols(), m, classes * m]);
    let mut xb = DMatrix::zeros(batch, x.ncols());
    let mut yb = vec![0; batch];
    for step in 0..config.steps {
        if cursor + batch > n {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        for (i, &r) in order[cursor..cursor + batch].iter().enumerate() {
            xb.row_mut(i).copy_from(&x.row(r));
            yb[i] = y[r];
        }
        cursor += batch;
        let (loss, grad) = model.loss_gradient(&xb, &yb)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, detail: format!("predictor cross-entropy {loss}") });
        }
        let grads =
            [grad.f_weights.as_slice().to_vec(), grad.f_bias.as_slice().to_vec(), grad.g_table.as_slice().to_vec()];
        adam.step(model.params_mut(), &grads, config.lr_at(step));
    }
    let final_loss = model.loss(&x, y)?;
    if !final_loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: config.steps,
            detail: format!("predictor cross-entropy {final_loss}"),
        });
    }
    let train_accuracy = model.accuracy(&x, y)?;
    Ok(PredictorFit { model, initial_loss, final_loss, train_accuracy })
}

/// Shard of `f(x)` rows with `g_table` as the unembedding block.
pub fn extract_representations(model: &PredictorModel, data: &SyntheticDataset) -> Result<ActivationShard> {
    let f = model.represent(&data.context_matrix())?;
    ActivationShard::from_matrix(&f)?.with_unembedding(&model.g_table)
}

/// Least-squares fit `f ≈ Â·logp + b̂` over the rows of both matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearMixtureFit {
    /// `m × Σk`.
    pub a_hat: DMatrix<f64>,
    pub b_hat: DVector<f64>,
    pub r_squared_per_dim: Vec<f64>,
    /// `1 − Σ SS_res / Σ SS_tot` pooled over dimensions.
    pub r_squared: f64,
    /// The regressors were collinear and the pseudoinverse was used.
    pub rank_deficient: bool,
}

const RANK_TOL: f64 = 1e-10;

/// OLS with intercept by QR, falling back to an SVD pseudoinverse when the
/// design is rank deficient.
pub fn check_linear_mixture(features: &DMatrix<f64>, log_posteriors: &DMatrix<f64>) -> Result<LinearMixtureFit> {
    let (n, k) = log_posteriors.shape();
    if features.nrows() != n {
        return Err(Error::Dimension(format!("{} feature rows, {n} posterior rows", features.nrows())));
    }
    if n < 2 {
        return Err(Error::InsufficientSamples("regression needs at least two rows".into()));
    }
    let mut design = DMatrix::from_element(n, k + 1, 1.0);
    design.columns_mut(0, k).copy_from(log_posteriors);

    let qr = design.clone().qr();
    let r = qr.r();
    let rmax = r.diagonal().amax();
    let full_rank = n > k && r.diagonal().iter().all(|d| d.abs() > RANK_TOL * rmax.max(1.0));
    let beta = if full_rank {
        let qty = qr.q().transpose() * features;
        r.solve_upper_triangular(&qty).ok_or_else(|| Error::InvalidArgument("singular triangular factor".into()))?
    } else {
        let pinv = design
            .clone()
            .pseudo_inverse(RANK_TOL * design.amax().max(1.0))
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        pinv * features
    };
    let a_hat = beta.rows(0, k).transpose();
    let b_hat = beta.row(k).transpose();
    let resid = features - &design * &beta;

    let mut per_dim = Vec::with_capacity(features.ncols());
    let (mut ss_res_all, mut ss_tot_all) = (0.0, 0.0);
    for j in 0..features.ncols() {
        let col = features.column(j);
        let mean = col.mean();
        let ss_tot = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
        let ss_res = resid.column(j).norm_squared();
        ss_res_all += ss_res;
        ss_tot_all += ss_tot;
        per_dim.push(r_squared(ss_res, ss_tot));
    }
    Ok(LinearMixtureFit {
        a_hat,
        b_hat,
        r_squared_per_dim: per_dim,
        r_squared: r_squared(ss_res_all, ss_tot_all),
        rank_deficient: !full_rank,
    })
}

fn r_squared(ss_res: f64, ss_tot: f64) -> f64 {
    if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res <= 1e-24 {
        1.0
    } else {
        0.0
    }
}

/// Mean aggregate R² after shuffling which posterior row goes with which
/// feature row, over `repeats` seeded shuffles.
pub fn permutation_null_r2(
    features: &DMatrix<f64>,
    log_posteriors: &DMatrix<f64>,
    repeats: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = seeded(seed);
    let n = log_posteriors.nrows();
    let mut total = 0.0;
    for _ in 0..repeats.max(1) {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let shuffled = log_posteriors.select_rows(idx.iter());
        total += check_linear_mixture(features, &shuffled)?.r_squared;
    }
    Ok(total / repeats.max(1) as f64)
}
