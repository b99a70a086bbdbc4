//! L2-regularized linear probes, their logits, conditional-entropy
//! diagnostics and the few-shot AUC harness.
//!
//! Probes are multinomial logistic regressions with the first class as the
//! reference (its logit is pinned at 0), so a two-class probe is ordinary
//! logistic regression and its single free logit is the class-1 log-odds.
//! The objective is `mean CE + l2/(2n)·‖W‖²` with an unpenalized bias; this
//! scaling makes `l2` the reciprocal of the usual inverse-regularization `C`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};

pub const MAX_ITERS: usize = 5_000;
pub const GRAD_TOL: f64 = 1e-6;
pub const CV_GRID: [f64; 4] = [0.01, 0.1, 1.0, 10.0];
pub const FEWSHOT_GRID: [usize; 5] = [4, 8, 16, 32, 128];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    /// `(classes − 1) × m`; row `c` scores class `classes[c + 1]`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub l2_strength: f64,
    /// Original label values in ascending order.
    pub classes: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
}

impl ProbeModel {
    pub fn zeros(m: usize, classes: Vec<usize>, l2_strength: f64) -> Self {
        let c = classes.len().saturating_sub(1);
        Self {
            weights: DMatrix::zeros(c, m),
            bias: DVector::zeros(c),
            l2_strength,
            classes,
            iterations: 0,
            converged: true,
        }
    }

    pub fn m(&self) -> usize {
        self.weights.ncols()
    }

    pub fn is_binary(&self) -> bool {
        self.classes.len() == 2
    }

    /// Class probabilities, one row per sample, columns in `classes` order.
    pub fn predict_proba(&self, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let s = probe_logits(self, features)?;
        Ok(full_softmax(&s))
    }

    pub fn predict(&self, features: &DMatrix<f64>) -> Result<Vec<usize>> {
        let p = self.predict_proba(features)?;
        Ok(p.row_iter().map(|r| self.classes[r.transpose().argmax().0]).collect())
    }

    pub fn accuracy(&self, features: &DMatrix<f64>, labels: &[usize]) -> Result<f64> {
        let pred = self.predict(features)?;
        Ok(pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len().max(1) as f64)
    }
}

/// Raw affine logits `X Wᵀ + b`, one column per non-reference class. For a
/// binary probe this is the single class-1 logit per sample.
pub fn probe_logits(model: &ProbeModel, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if features.ncols() != model.m() {
        return Err(Error::Dimension(format!(
            "features have {} columns, probe expects {}",
            features.ncols(),
            model.m()
        )));
    }
    let mut s = features * model.weights.transpose();
    for mut row in s.row_iter_mut() {
        row += model.bias.transpose();
    }
    Ok(s)
}

/// Softmax over `[0, s_1, …, s_{C−1}]` per row.
fn full_softmax(s: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, c) = s.shape();
    let mut p = DMatrix::zeros(n, c + 1);
    for r in 0..n {
        let max = s.row(r).iter().fold(0.0f64, |a, &b| a.max(b));
        let mut sum = (-max).exp();
        p[(r, 0)] = sum;
        for j in 0..c {
            let e = (s[(r, j)] - max).exp();
            p[(r, j + 1)] = e;
            sum += e;
        }
        p.row_mut(r).unscale_mut(sum);
    }
    p
}

fn class_indices(labels: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let idx = labels.iter().map(|l| classes.binary_search(l).unwrap()).collect();
    (classes, idx)
}

/// Objective and gradient of a probe in flat `[W (column-major), b]` form.
struct ProbeObjective<'a> {
    x: &'a DMatrix<f64>,
    y: Vec<usize>,
    c: usize,
    l2: f64,
}

impl ProbeObjective<'_> {
    fn unpack(&self, theta: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let m = self.x.ncols();
        let w = DMatrix::from_column_slice(self.c, m, &theta[..self.c * m]);
        let b = DVector::from_column_slice(&theta[self.c * m..]);
        (w, b)
    }

    fn logits(&self, theta: &[f64]) -> DMatrix<f64> {
        let (w, b) = self.unpack(theta);
        let mut s = self.x * w.transpose();
        for mut row in s.row_iter_mut() {
            row += b.transpose();
        }
        s
    }

    fn value(&self, theta: &[f64]) -> f64 {
        let s = self.logits(theta);
        let n = self.x.nrows() as f64;
        let mut ce = 0.0;
        for (r, &t) in self.y.iter().enumerate() {
            let row = s.row(r);
            let max = row.iter().fold(0.0f64, |a, &b| a.max(b));
            let lse = max + ((-max).exp() + row.iter().map(|v| (v - max).exp()).sum::<f64>()).ln();
            let st = if t == 0 { 0.0 } else { s[(r, t - 1)] };
            ce += lse - st;
        }
        let wn: f64 = theta[..self.c * self.x.ncols()].iter().map(|v| v * v).sum();
        ce / n + self.l2 / (2.0 * n) * wn
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let s = self.logits(theta);
        let n = self.x.nrows() as f64;
        let p = full_softmax(&s);
        let mut ds = p.columns(1, self.c).into_owned();
        for (r, &t) in self.y.iter().enumerate() {
            if t > 0 {
                ds[(r, t - 1)] -= 1.0;
            }
        }
        ds /= n;
        let (w, _) = self.unpack(theta);
        let dw = ds.transpose() * self.x + w * (self.l2 / n);
        let db = DVector::from_fn(self.c, |j, _| ds.column(j).sum());
        [dw.as_slice(), db.as_slice()].concat()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Full-batch gradient descent with Armijo backtracking, seeded by a
/// Barzilai–Borwein step. Stops at gradient norm `< 1e-6` or after 5000
/// iterations. Starts from zero, so the result depends only on the data and
/// `l2`.
pub fn train_probe(features: &DMatrix<f64>, labels: &[usize], l2: f64) -> Result<ProbeModel> {
    if features.nrows() != labels.len() {
        return Err(Error::Dimension(format!("{} rows, {} labels", features.nrows(), labels.len())));
    }
    if labels.len() < 2 {
        return Err(Error::InsufficientSamples("probe needs at least two samples".into()));
    }
    if !(l2 >= 0.0 && l2.is_finite()) {
        return Err(Error::InvalidArgument(format!("l2 strength {l2} must be finite and >= 0")));
    }
    let (classes, y) = class_indices(labels);
    if classes.len() < 2 {
        return Err(Error::InvalidArgument("probe labels contain a single class".into()));
    }
    let m = features.ncols();
    let obj = ProbeObjective { x: features, y, c: classes.len() - 1, l2 };
    let mut theta = vec![0.0; obj.c * (m + 1)];
    let mut f = obj.value(&theta);
    let mut g = obj.gradient(&theta);
    let mut step = 1.0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITERS {
        let gnorm2 = dot(&g, &g);
        if gnorm2.sqrt() < GRAD_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t - step * gi).collect();
            let fc = obj.value(&cand);
            if fc <= f - 1e-4 * step * gnorm2 {
                accepted = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        let Some((next, fnext)) = accepted else { break };
        let gnext = obj.gradient(&next);
        let dtheta: Vec<f64> = next.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let dg: Vec<f64> = gnext.iter().zip(&g).map(|(a, b)| a - b).collect();
        let curv = dot(&dtheta, &dg);
        step = if curv > 0.0 { (dot(&dtheta, &dtheta) / curv).clamp(1e-10, 1e10) } else { step * 2.0 };
        theta = next;
        f = fnext;
        g = gnext;
    }
    let (weights, bias) = obj.unpack(&theta);
    Ok(ProbeModel { weights, bias, l2_strength: l2, classes, iterations, converged })
}

/// Objective value and gradient at an explicit parameter point, in the flat
/// layout `[W column-major, b]`. Exposed for gradient checks.
pub fn probe_objective(features: &DMatrix<f64>, labels: &[usize], l2: f64, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
    let (classes, y) = class_indices(labels);
    let c = classes.len().saturating_sub(1).max(1);
    if theta.len() != c * (features.ncols() + 1) {
        return Err(Error::Dimension(format!(
            "theta has {} entries, expected {}",
            theta.len(),
            c * (features.ncols() + 1)
        )));
    }
    let obj = ProbeObjective { x: features, y, c, l2 };
    Ok((obj.value(theta), obj.gradient(theta)))
}

/// Mean predictive entropy in bits, `−Σ_c p_c log₂ p_c` averaged over rows.
pub fn entropy_diagnostic(model: &ProbeModel, features: &DMatrix<f64>) -> Result<f64> {
    let p = model.predict_proba(features)?;
    let total: f64 =
        p.row_iter().map(|row| row.iter().filter(|&&q| q > 0.0).map(|&q| -q * q.log2()).sum::<f64>()).sum();
    Ok(total / p.nrows().max(1) as f64)
}

/// Area under the ROC curve by the Mann–Whitney statistic with averaged
/// ranks for ties. `positive[i]` marks the positive class.
pub fn auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::Dimension(format!("{} scores, {} labels", scores.len(), positive.len())));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument("AUC needs both classes".into()));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// 1-based ranks, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub accuracy: f64,
    pub auc: f64,
    pub mean_conditional_entropy_bits: f64,
    pub logits: Vec<f64>,
}

/// Accuracy, AUC, entropy and logits of a binary probe on labelled data.
pub fn probe_report(model: &ProbeModel, features: &DMatrix<f64>, labels: &[usize]) -> Result<ProbeReport> {
    if !model.is_binary() {
        return Err(Error::InvalidArgument("probe report needs a binary probe".into()));
    }
    let logits: Vec<f64> = probe_logits(model, features)?.column(0).iter().copied().collect();
    let positive: Vec<bool> = labels.iter().map(|&l| l == model.classes[1]).collect();
    Ok(ProbeReport {
        accuracy: model.accuracy(features, labels)?,
        auc: auc(&logits, &positive)?,
        mean_conditional_entropy_bits: entropy_diagnostic(model, features)?,
        logits,
    })
}

/// Seeded split of `0..n` into a `train_frac` share and the rest.
pub fn split_indices(n: usize, train_frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded(seed));
    let k = ((n as f64 * train_frac).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let test = idx.split_off(k);
    (idx, test)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutEntropy {
    pub mean_bits: f64,
    pub per_seed_bits: Vec<f64>,
    pub mean_accuracy: f64,
}

/// Trains on 70% and measures entropy on the held-out 30%, once per seed.
pub fn heldout_entropy(features: &DMatrix<f64>, labels: &[usize], l2: f64, seeds: &[u64]) -> Result<HeldOutEntropy> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("at least one split seed is required".into()));
    }
    let mut bits = Vec::with_capacity(seeds.len());
    let mut acc = 0.0;
    for &s in seeds {
        let (train, test) = split_indices(labels.len(), 0.7, s);
        let xtr = features.select_rows(train.iter());
        let ytr: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
        let xte = features.select_rows(test.iter());
        let yte: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
        let probe = train_probe(&xtr, &ytr, l2)?;
        bits.push(entropy_diagnostic(&probe, &xte)?);
        acc += probe.accuracy(&xte, &yte)?;
    }
    Ok(HeldOutEntropy {
        mean_bits: bits.iter().sum::<f64>() / bits.len() as f64,
        per_seed_bits: bits,
        mean_accuracy: acc / seeds.len() as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L2Mode {
    /// Pick `l2` from [`CV_GRID`] by cross-validated log-loss.
    Cv,
    /// `l2 = 1`.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewshotResult {
    pub shots: usize,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub per_repeat: Vec<f64>,
    pub chosen_l2: Vec<f64>,
}

/// Cross-validated choice of `l2`: k-fold with folds dealt round-robin
/// within each class, leave-one-out below six samples.
pub fn select_l2(features: &DMatrix<f64>, labels: &[usize]) -> Result<f64> {
    let n = labels.len();
    let folds = if n < 6 { n } else { 3 };
    let mut fold_of = vec![0; n];
    let (classes, y) = class_indices(labels);
    let mut counter = vec![0; classes.len()];
    for i in 0..n {
        fold_of[i] = counter[y[i]] % folds;
        counter[y[i]] += 1;
    }
    if n < 6 {
        fold_of = (0..n).collect();
    }
    let mut best = (f64::INFINITY, CV_GRID[0]);
    for &l2 in &CV_GRID {
        let mut loss = 0.0;
        let mut count = 0usize;
        for k in 0..folds {
            let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != k).collect();
            let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == k).collect();
            let ytr: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
            if test.is_empty() || class_indices(&ytr).0.len() < 2 {
                continue;
            }
            let probe = train_probe(&features.select_rows(train.iter()), &ytr, l2)?;
            let p = probe.predict_proba(&features.select_rows(test.iter()))?;
            for (r, &i) in test.iter().enumerate() {
                let col = probe.classes.iter().position(|&c| c == labels[i]);
                let q = col.map_or(0.0, |c| p[(r, c)]);
                loss -= q.max(1e-15).ln();
                count += 1;
            }
        }
        let mean = if count > 0 { loss / count as f64 } else { f64::INFINITY };
        if mean < best.0 {
            best = (mean, l2);
        }
    }
    Ok(best.1)
}

/// Few-shot probing: draw `shots` class-balanced training samples, fit a
/// probe, score AUC on every remaining sample; repeat and aggregate.
pub fn fewshot_auc(
    features: &DMatrix<f64>,
    labels: &[usize],
    shots: usize,
    repeats: usize,
    seed: u64,
    mode: L2Mode,
) -> Result<FewshotResult> {
    let (classes, y) = class_indices(labels);
    if classes.len() != 2 {
        return Err(Error::InvalidArgument(format!("few-shot AUC needs 2 classes, found {}", classes.len())));
    }
    if shots < 2 || repeats == 0 {
        return Err(Error::InvalidArgument("shots must be >= 2 and repeats >= 1".into()));
    }
    let per_class = [shots / 2, shots - shots / 2];
    let pools: Vec<Vec<usize>> = (0..2).map(|c| (0..y.len()).filter(|&i| y[i] == c).collect()).collect();
    for c in 0..2 {
        if pools[c].len() <= per_class[c] {
            return Err(Error::InsufficientSamples(format!(
                "class {} has {} samples, {} shots need more",
                classes[c],
                pools[c].len(),
                per_class[c]
            )));
        }
    }
    let mut aucs = Vec::with_capacity(repeats);
    let mut chosen = Vec::with_capacity(repeats);
    for rep in 0..repeats {
        let mut rng = seeded(derive_seed(seed, rep as u64));
        let mut train = Vec::with_capacity(shots);
        for c in 0..2 {
            let mut pool = pools[c].clone();
            pool.shuffle(&mut rng);
            train.extend_from_slice(&pool[..per_class[c]]);
        }
        train.sort_unstable();
        let test: Vec<usize> = (0..y.len()).filter(|i| train.binary_search(i).is_err()).collect();
        let xtr = features.select_rows(train.iter());
        let ytr: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
        let l2 = match mode {
            L2Mode::Fixed => 1.0,
            L2Mode::Cv => select_l2(&xtr, &ytr)?,
        };
        let probe = train_probe(&xtr, &ytr, l2)?;
        let scores: Vec<f64> =
            probe_logits(&probe, &features.select_rows(test.iter()))?.column(0).iter().copied().collect();
        let positive: Vec<bool> = test.iter().map(|&i| y[i] == 1).collect();
        aucs.push(auc(&scores, &positive)?);
        chosen.push(l2);
    }
    let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
    let std = if aucs.len() > 1 {
        (aucs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (aucs.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(FewshotResult { shots, mean_auc: mean, std_auc: std, per_repeat: aucs, chosen_l2: chosen })
}
