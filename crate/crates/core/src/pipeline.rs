//! End-to-end runs on synthetic worlds: the identifiability experiment, the
//! clamped-exp ablation and planted-dictionary recovery.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dict::{init_model, DictConfig, DictModel, ModelKind, Norm, Surrogate};
use crate::error::Result;
use crate::eval::{align_features, concept_alignment, concept_probes, AlignmentReport};
use crate::io::{ActivationShard, ConceptManifest, ConceptPairs};
use crate::predictor::{
    check_linear_mixture, extract_representations, permutation_null_r2, train_predictor, PredictorModel,
};
use crate::probe::{split_indices, train_probe};
use crate::rng::derive_seed;
use crate::train::{loss_eval, train_dict_matrix, TrainConfig};
use crate::world::{
    ancestral_sample, log_posterior_matrix, make_counterfactuals, sample_world, LatentWorld, SyntheticDataset,
};

/// Settings of the synthetic experiment. Defaults: five binary latents, ten
/// expected edges, a 10-dimensional predictor, 40 dictionary features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReproConfig {
    pub num_latents: usize,
    pub expected_edges: usize,
    pub train_samples: usize,
    pub probe_samples: usize,
    pub base_pairs: usize,
    pub mixture_samples: usize,
    pub null_repeats: usize,
    pub m: usize,
    pub d_feat: usize,
    pub predictor: TrainConfig,
    pub dict: TrainConfig,
    pub probe_l2: f64,
    pub conca_surrogate: Surrogate,
}

impl Default for ReproConfig {
    fn default() -> Self {
        Self {
            num_latents: 5,
            expected_edges: 10,
            train_samples: 20_000,
            probe_samples: 10_000,
            base_pairs: 2_000,
            mixture_samples: 5_000,
            null_repeats: 5,
            m: 10,
            d_feat: 40,
            predictor: TrainConfig::predictor_desk(),
            dict: TrainConfig::desk(),
            probe_l2: 1.0,
            conca_surrogate: Surrogate::Softplus,
        }
    }
}

/// Derived seed streams, so each stage is independently reproducible.
mod stream {
    pub const WORLD: u64 = 0;
    pub const TRAIN: u64 = 1;
    pub const PROBE: u64 = 2;
    pub const PAIRS: u64 = 3;
    pub const PREDICTOR: u64 = 4;
    pub const CONCA: u64 = 5;
    pub const SAE: u64 = 6;
    pub const NULL: u64 = 7;
    pub const SPLIT: u64 = 8;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproSummary {
    pub seed: u64,
    pub mask_index: usize,
    pub predictor_initial_loss: f64,
    pub predictor_final_loss: f64,
    /// Mean held-out accuracy of linear probes for every latent.
    pub probe_acc: f64,
    pub probe_acc_per_latent: Vec<f64>,
    pub conca_mpc: f64,
    pub sae_mpc: f64,
    pub conca_mse: f64,
    pub sae_mse: f64,
    pub r2: f64,
    pub null_r2: f64,
    pub conca_alignment: AlignmentReport,
    pub sae_alignment: AlignmentReport,
}

/// Counterfactual pairs for every latent except the masked one, stacked in
/// one shard. Pairs are oriented so side A holds latent value 0.
#[derive(Debug, Clone)]
pub struct ConceptPairData {
    pub representations: DMatrix<f64>,
    pub manifest: ConceptManifest,
    pub dataset: SyntheticDataset,
}

/// Builds the concept shard for `concepts` from a base sample.
pub fn concept_pair_data(
    world: &LatentWorld,
    predictor: &PredictorModel,
    base: &SyntheticDataset,
    concepts: &[usize],
) -> Result<ConceptPairData> {
    let (dataset, manifest) = counterfactual_union(world, base, concepts)?;
    let representations = predictor.represent(&dataset.context_matrix())?;
    Ok(ConceptPairData { representations, manifest, dataset })
}

/// Counterfactual twins of `base` for each concept, stacked, with a manifest
/// whose side A always has `z_c = 0`.
pub fn counterfactual_union(
    world: &LatentWorld,
    base: &SyntheticDataset,
    concepts: &[usize],
) -> Result<(SyntheticDataset, ConceptManifest)> {
    let mut all = SyntheticDataset {
        samples: Vec::new(),
        targets: Vec::new(),
        latents: Vec::new(),
        counterfactual_pairs: Vec::new(),
    };
    let mut manifest = ConceptManifest { concepts: Vec::new() };
    for &c in concepts {
        let cf = make_counterfactuals(world, base, c)?;
        let offset = all.len();
        let pairs = cf
            .counterfactual_pairs
            .iter()
            .map(|&(a, b, _)| if cf.latents[a][c] == 0 { (a + offset, b + offset) } else { (b + offset, a + offset) })
            .collect();
        manifest.concepts.push(ConceptPairs { name: format!("z{c}"), pairs });
        all.counterfactual_pairs.extend(cf.counterfactual_pairs.iter().map(|&(a, b, i)| (a + offset, b + offset, i)));
        all.samples.extend(cf.samples);
        all.targets.extend(cf.targets);
        all.latents.extend(cf.latents);
    }
    Ok((all, manifest))
}

/// Held-out accuracy of a linear probe for each latent (70/30 split).
pub fn latent_probe_accuracy(features: &DMatrix<f64>, latents: &[Vec<usize>], l2: f64, seed: u64) -> Result<Vec<f64>> {
    let l = latents.first().map_or(0, Vec::len);
    let (train, test) = split_indices(latents.len(), 0.7, seed);
    let xtr = features.select_rows(train.iter());
    let xte = features.select_rows(test.iter());
    (0..l)
        .into_par_iter()
        .map(|i| {
            let ytr: Vec<usize> = train.iter().map(|&r| latents[r][i]).collect();
            let yte: Vec<usize> = test.iter().map(|&r| latents[r][i]).collect();
            let probe = train_probe(&xtr, &ytr, l2)?;
            probe.accuracy(&xte, &yte)
        })
        .collect()
}

pub fn conca_layernorm(m: usize, d_feat: usize, surrogate: Surrogate, seed: u64) -> Result<DictModel> {
    init_model(&DictConfig::conca(m, d_feat, Norm::layer(), surrogate).with_seed(seed))
}

pub fn sae_panneal(m: usize, d_feat: usize, seed: u64) -> Result<DictModel> {
    init_model(&DictConfig::sae(ModelKind::SaeReluPanneal, m, d_feat).with_seed(seed))
}

/// Synthesize a world, fit the predictor, train ConCA (layer norm) and the
/// p-annealing SAE on its representations, align both with concept probes,
/// and regress the representations on the true log-posteriors.
pub fn repro_appendix_m(config: &ReproConfig, seed: u64) -> Result<ReproSummary> {
    let s = |k| derive_seed(seed, k);
    let world = sample_world(config.num_latents, config.expected_edges, s(stream::WORLD))?;
    let train = ancestral_sample(&world, config.train_samples, s(stream::TRAIN))?;
    let pcfg = TrainConfig { seed: s(stream::PREDICTOR), ..config.predictor.clone() };
    let fit = train_predictor(&train, config.m, &pcfg)?;
    let predictor = &fit.model;
    let reps = predictor.represent(&train.context_matrix())?;
    log::info!("seed {seed}: predictor loss {:.4} -> {:.4}", fit.initial_loss, fit.final_loss);

    let fresh = ancestral_sample(&world, config.probe_samples, s(stream::PROBE))?;
    let fresh_reps = predictor.represent(&fresh.context_matrix())?;
    let acc = latent_probe_accuracy(&fresh_reps, &fresh.latents, config.probe_l2, s(stream::SPLIT))?;
    let probe_acc = acc.iter().sum::<f64>() / acc.len() as f64;

    let concepts: Vec<usize> = (0..world.num_latents()).filter(|&i| i != world.mask_index()).collect();
    let base = ancestral_sample(&world, config.base_pairs, s(stream::PAIRS))?;
    let pairs = concept_pair_data(&world, predictor, &base, &concepts)?;

    let dcfg = config.dict.clone();
    let (conca, sae) = rayon::join(
        || {
            let model = conca_layernorm(config.m, config.d_feat, config.conca_surrogate, s(stream::CONCA))?;
            train_dict_matrix(model, &reps, &TrainConfig { seed: s(stream::CONCA), ..dcfg.clone() })
        },
        || {
            let model = sae_panneal(config.m, config.d_feat, s(stream::SAE))?;
            train_dict_matrix(model, &reps, &TrainConfig { seed: s(stream::SAE), ..dcfg.clone() })
        },
    );
    let (conca, _) = conca?;
    let (sae, _) = sae?;
    let conca_alignment = concept_alignment(&conca, &pairs.representations, &pairs.manifest, config.probe_l2, None)?;
    let sae_alignment = concept_alignment(&sae, &pairs.representations, &pairs.manifest, config.probe_l2, None)?;

    let mix = train.head(config.mixture_samples);
    let logp = log_posterior_matrix(&world, &mix)?;
    let mix_reps = reps.rows(0, mix.len()).into_owned();
    let r2 = check_linear_mixture(&mix_reps, &logp)?.r_squared;
    let null_r2 = permutation_null_r2(&mix_reps, &logp, config.null_repeats, s(stream::NULL))?;

    Ok(ReproSummary {
        seed,
        mask_index: world.mask_index(),
        predictor_initial_loss: fit.initial_loss,
        predictor_final_loss: fit.final_loss,
        probe_acc,
        probe_acc_per_latent: acc,
        conca_mpc: conca_alignment.mpc,
        sae_mpc: sae_alignment.mpc,
        conca_mse: loss_eval(&conca, &reps, dcfg.alpha)?.mse,
        sae_mse: loss_eval(&sae, &reps, dcfg.alpha)?.mse,
        r2,
        null_r2,
        conca_alignment,
        sae_alignment,
    })
}

/// Representations of a trained predictor on a fresh synthetic world, as
/// used by the ablation harness.
pub fn synthetic_representations(config: &ReproConfig, seed: u64) -> Result<(LatentWorld, ActivationShard)> {
    let s = |k| derive_seed(seed, k);
    let world = sample_world(config.num_latents, config.expected_edges, s(stream::WORLD))?;
    let train = ancestral_sample(&world, config.train_samples, s(stream::TRAIN))?;
    let pcfg = TrainConfig { seed: s(stream::PREDICTOR), ..config.predictor.clone() };
    let fit = train_predictor(&train, config.m, &pcfg)?;
    let shard = extract_representations(&fit.model, &train)?;
    Ok((world, shard))
}

/// Clamp ranges of the exp-surrogate ablation.
pub const CLAMP_RANGES: [(f64, f64); 4] = [(-20.0, 20.0), (-30.0, 30.0), (-40.0, 40.0), (-50.0, 50.0)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub surrogate: String,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub final_mse: f64,
    pub final_sparsity: f64,
    pub finite: bool,
}

/// Trains layer-norm ConCA on `data` once with SoftPlus and once per clamp
/// range with the clamped exponential, reporting eval-mode losses.
pub fn clamp_ablation(data: &DMatrix<f64>, d_feat: usize, config: &TrainConfig) -> Result<Vec<AblationRow>> {
    let mut variants = vec![Surrogate::Softplus];
    variants.extend(CLAMP_RANGES.iter().map(|&(lo, hi)| Surrogate::ExpClamped { lo, hi }));
    variants
        .into_par_iter()
        .map(|sur| {
            let model =
                init_model(&DictConfig::conca(data.ncols(), d_feat, Norm::layer(), sur).with_seed(config.seed))?;
            let (lo, hi) = match sur {
                Surrogate::ExpClamped { lo, hi } => (Some(lo), Some(hi)),
                _ => (None, None),
            };
            let row = |mse: f64, sparsity: f64| AblationRow {
                surrogate: sur.name().to_string(),
                lo,
                hi,
                final_mse: mse,
                final_sparsity: sparsity,
                finite: mse.is_finite() && sparsity.is_finite(),
            };
            match train_dict_matrix(model, data, config) {
                Ok((trained, _)) => {
                    let parts = loss_eval(&trained, data, config.alpha)?;
                    Ok(row(parts.mse, parts.sparsity))
                }
                Err(crate::Error::NonFiniteLoss { .. }) => Ok(row(f64::NAN, f64::NAN)),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Planted linear mixture `f = A·logp + b` over a world's true
/// log-posteriors.
#[derive(Debug, Clone)]
pub struct PlantedMixture {
    pub world: LatentWorld,
    pub data: SyntheticDataset,
    pub log_posteriors: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: nalgebra::DVector<f64>,
    pub representations: DMatrix<f64>,
}

/// Draws `A` (`m × Σk`) and `b` with standard normal entries and maps each
/// sample's stacked log-posteriors through them.
pub fn planted_mixture(
    num_latents: usize,
    expected_edges: usize,
    n: usize,
    m: usize,
    seed: u64,
) -> Result<PlantedMixture> {
    use rand_distr::{Distribution, StandardNormal};
    let world = sample_world(num_latents, expected_edges, derive_seed(seed, stream::WORLD))?;
    let data = ancestral_sample(&world, n, derive_seed(seed, stream::TRAIN))?;
    let log_posteriors = log_posterior_matrix(&world, &data)?;
    let mut rng = crate::rng::seeded(derive_seed(seed, stream::PREDICTOR));
    let k = log_posteriors.ncols();
    let a = DMatrix::from_fn(m, k, |_, _| StandardNormal.sample(&mut rng));
    let b = nalgebra::DVector::from_fn(m, |_, _| StandardNormal.sample(&mut rng));
    let mut representations = &log_posteriors * a.transpose();
    for mut row in representations.row_iter_mut() {
        row += b.transpose();
    }
    Ok(PlantedMixture { world, data, log_posteriors, a, b, representations })
}

impl PlantedMixture {
    /// Planted representations of any dataset drawn from the same world.
    pub fn represent(&self, data: &SyntheticDataset) -> Result<DMatrix<f64>> {
        let mut f = log_posterior_matrix(&self.world, data)? * self.a.transpose();
        for mut row in f.row_iter_mut() {
            row += self.b.transpose();
        }
        Ok(f)
    }

    /// `log p(z_c = 1 | x) − log p(z_c = 0 | x)` for every row of `data`.
    pub fn log_odds(&self, data: &SyntheticDataset, concept: usize) -> Result<Vec<f64>> {
        let logp = log_posterior_matrix(&self.world, data)?;
        let offset: usize = self.world.cardinalities()[..concept].iter().sum();
        Ok(logp.row_iter().map(|r| r[offset + 1] - r[offset]).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedRecovery {
    pub seed: u64,
    /// Eval-mode reconstruction MSE over the total variance of the input.
    pub mse_fraction: f64,
    /// MPC of the trained ConCA features alone.
    pub conca_mpc: f64,
    /// MPC once the true concept log-odds are appended as extra feature
    /// columns.
    pub planted_mpc: f64,
}

/// Trains layer-norm ConCA on a planted mixture `f = A·logp + b` and aligns
/// its features, with and without the planted log-odds columns, against
/// probes fit on counterfactual pairs.
pub fn planted_recovery(config: &ReproConfig, seed: u64) -> Result<PlantedRecovery> {
    let s = |k| derive_seed(seed, k);
    let planted = planted_mixture(config.num_latents, config.expected_edges, config.train_samples, config.m, seed)?;
    let data = &planted.representations;
    let model = conca_layernorm(config.m, config.d_feat, config.conca_surrogate, s(stream::CONCA))?;
    let (model, _) = train_dict_matrix(model, data, &TrainConfig { seed: s(stream::CONCA), ..config.dict.clone() })?;
    let mse_fraction = loss_eval(&model, data, config.dict.alpha)?.mse / total_variance(data);

    let world = &planted.world;
    let concepts: Vec<usize> = (0..world.num_latents()).filter(|&i| i != world.mask_index()).collect();
    let base = ancestral_sample(world, config.base_pairs, s(stream::PAIRS))?;
    let (pairs, manifest) = counterfactual_union(world, &base, &concepts)?;
    let reps = planted.represent(&pairs)?;
    let conca_mpc = concept_alignment(&model, &reps, &manifest, config.probe_l2, None)?.mpc;

    let z = model.eval_features(&reps, None)?;
    let mut augmented = DMatrix::zeros(reps.nrows(), z.ncols() + concepts.len());
    augmented.columns_mut(0, z.ncols()).copy_from(&z);
    for (j, &c) in concepts.iter().enumerate() {
        let odds = planted.log_odds(&pairs, c)?;
        augmented.column_mut(z.ncols() + j).copy_from_slice(&odds);
    }
    let probes = concept_probes(&reps, &manifest, config.probe_l2)?;
    let features: Vec<DMatrix<f64>> =
        manifest.concepts.iter().map(|c| augmented.select_rows(c.rows_and_labels().0.iter())).collect();
    let planted_mpc = align_features(&probes.names, &features, &probes.logits)?.mpc;
    Ok(PlantedRecovery { seed, mse_fraction, conca_mpc, planted_mpc })
}

/// Total variance of `data`: the sum of per-column biased variances, which
/// is the MSE of predicting every row by the mean.
pub fn total_variance(data: &DMatrix<f64>) -> f64 {
    let n = data.nrows() as f64;
    data.column_iter()
        .map(|c| {
            let mu = c.mean();
            c.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n
        })
        .sum()
}
