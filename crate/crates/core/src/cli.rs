//! Command-line front end. Every subcommand reads an optional `--config`
//! JSON object, overlays the flags given on the command line, validates the
//! result and delegates to the library.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::dict::{init_model, read_checkpoint, write_checkpoint, DictConfig, DictModel, ModelKind, Norm, Surrogate};
use crate::error::{Error, Result};
use crate::eval::{self, DEFAULT_PATCH_SAMPLES, DEFAULT_THRESHOLDS};
use crate::io::{read_json, write_csv, write_json, ActivationShard, ConceptManifest, EvalReport, ProbeManifest};
use crate::pipeline::{self, ReproConfig};
use crate::predictor;
use crate::probe::{self, L2Mode, FEWSHOT_GRID};
use crate::train::{self, TrainConfig};
use crate::world::{self, LatentWorld, SyntheticDataset};

#[derive(Debug, Parser)]
#[command(name = "conca-lab", version, about = "Train and evaluate concept dictionaries on activation shards")]
pub struct Cli {
    /// Worker threads for parallel sections.
    #[arg(long, global = true, env = "CONCA_LAB_THREADS")]
    pub threads: Option<usize>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a latent world and a dataset from it.
    Synth(SynthArgs),
    /// Fit the toy predictor and export representation shards.
    TrainBase(TrainBaseArgs),
    /// Train a ConCA or SAE dictionary on a shard.
    TrainDict(TrainDictArgs),
    /// Probe-logit alignment of dictionary features (MPC).
    EvalAlign(EvalAlignArgs),
    /// Rank-based fraction of significant features per concept.
    EvalRankfrac(EvalRankfracArgs),
    /// Activation patching through the dictionary reconstruction.
    EvalPatch(EvalPatchArgs),
    /// Spectrum of greedily selected unembedding differences.
    DiagDiversity(DiagDiversityArgs),
    /// Held-out conditional entropy of concept probes.
    DiagEntropy(DiagEntropyArgs),
    /// Few-shot probing AUC over a probe manifest.
    ProbeFewshot(ProbeFewshotArgs),
    /// Regress representations on true log-posteriors.
    CheckMixture(CheckMixtureArgs),
    /// Full synthetic identifiability run.
    ReproAppendixM(ReproArgs),
}

/// Arguments shared by every subcommand.
#[derive(Debug, Args, Serialize)]
pub struct Common {
    /// JSON object of parameters; flags given on the command line win.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Output directory. Reports go to stdout when omitted.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum KindArg {
    Conca,
    SaeReluPanneal,
    SaeTopk,
    SaeBatchTopk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormArg {
    None,
    Layer,
    Batch,
    Group,
    Dropout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum SurrogateArg {
    None,
    Selu,
    Elu,
    Softplus,
    ExpClamped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L2ModeArg {
    Cv,
    Fixed,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latents: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edges: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub latents: usize,
    pub edges: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self { latents: 5, edges: 10, samples: 20_000, seed: 0 }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainBaseArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// World JSON written by `synth`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub world: Option<PathBuf>,
    /// Dataset JSON written by `synth`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    /// Base samples per concept for the counterfactual shard.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pair_base: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup_steps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainBaseParams {
    pub world: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub m: usize,
    pub pair_base: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    pub seed: u64,
}

impl Default for TrainBaseParams {
    fn default() -> Self {
        let t = TrainConfig::predictor_desk();
        Self {
            world: None,
            data: None,
            m: 10,
            pair_base: 2_000,
            steps: t.steps,
            batch_size: t.batch_size,
            lr: t.lr,
            warmup_steps: t.warmup_steps,
            seed: 0,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainDictArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shard: Option<PathBuf>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<KindArg>,
    /// Active features per row (top-k kinds).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub norm: Option<NormArg>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub groups: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropout_p: Option<f64>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub surrogate: Option<SurrogateArg>,
    /// Clamp range of the `exp_clamped` surrogate, as `LO,HI`.
    #[arg(long, value_delimiter = ',', num_args = 2, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exp_range: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_feat: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub affine: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup_steps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Clamp applied to input activations, as `LO,HI`.
    #[arg(long, value_delimiter = ',', num_args = 2, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clamp: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainDictParams {
    pub shard: Option<PathBuf>,
    pub kind: KindArg,
    pub k: usize,
    pub norm: NormArg,
    pub groups: usize,
    pub dropout_p: f64,
    pub surrogate: SurrogateArg,
    pub exp_range: (f64, f64),
    /// Defaults to `4·m`.
    pub d_feat: Option<usize>,
    pub affine: bool,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl Default for TrainDictParams {
    fn default() -> Self {
        Self {
            shard: None,
            kind: KindArg::Conca,
            k: 32,
            norm: NormArg::Layer,
            groups: 4,
            dropout_p: 0.1,
            surrogate: SurrogateArg::Softplus,
            exp_range: (-20.0, 20.0),
            d_feat: None,
            affine: true,
            train: TrainConfig::default(),
        }
    }
}

impl TrainDictParams {
    fn dict_config(&self, m: usize) -> DictConfig {
        let d_feat = self.d_feat.unwrap_or(4 * m);
        let kind = match self.kind {
            KindArg::Conca => ModelKind::Conca,
            KindArg::SaeReluPanneal => ModelKind::SaeReluPanneal,
            KindArg::SaeTopk => ModelKind::SaeTopk { k: self.k },
            KindArg::SaeBatchTopk => ModelKind::SaeBatchTopk { k: self.k },
        };
        if kind.is_sae() {
            return DictConfig::sae(kind, m, d_feat).with_seed(self.train.seed);
        }
        let norm = match self.norm {
            NormArg::None => Norm::None,
            NormArg::Layer => Norm::layer(),
            NormArg::Batch => Norm::batch(),
            NormArg::Group => Norm::group(self.groups),
            NormArg::Dropout => Norm::dropout(self.dropout_p),
        };
        let surrogate = match self.surrogate {
            SurrogateArg::None => Surrogate::None,
            SurrogateArg::Selu => Surrogate::Selu,
            SurrogateArg::Elu => Surrogate::Elu,
            SurrogateArg::Softplus => Surrogate::Softplus,
            SurrogateArg::ExpClamped => Surrogate::ExpClamped { lo: self.exp_range.0, hi: self.exp_range.1 },
        };
        let mut cfg = DictConfig::conca(m, d_feat, norm, surrogate).with_seed(self.train.seed);
        cfg.affine = self.affine;
        cfg
    }
}

/// Flags shared by the evaluations that read a model, a shard and a
/// concept manifest.
#[derive(Debug, Args, Serialize)]
pub struct ModelShardArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shard: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Evaluate on `exp(clamp(ẑ))` instead of the model's surrogate.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub exp: bool,
    #[arg(long, value_delimiter = ',', num_args = 2, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exp_range: Option<Vec<f64>>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalAlignArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub io: ModelShardArgs,
    /// Probe regularization strength.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l2: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalAlignParams {
    pub model: Option<PathBuf>,
    pub shard: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub exp: bool,
    pub exp_range: (f64, f64),
    pub l2: f64,
    pub seed: u64,
}

impl Default for EvalAlignParams {
    fn default() -> Self {
        Self { model: None, shard: None, manifest: None, exp: false, exp_range: (-20.0, 20.0), l2: 1.0, seed: 0 }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct EvalRankfracArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub io: ModelShardArgs,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalRankfracParams {
    pub model: Option<PathBuf>,
    pub shard: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub exp: bool,
    pub exp_range: (f64, f64),
    pub k: usize,
    pub thresholds: Vec<f64>,
    pub seed: u64,
}

impl Default for EvalRankfracParams {
    fn default() -> Self {
        Self {
            model: None,
            shard: None,
            manifest: None,
            exp: false,
            exp_range: (-20.0, 20.0),
            k: 8,
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            seed: 0,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct EvalPatchArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    /// Shard carrying an unembedding block.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shard: Option<PathBuf>,
    /// Rows to sample; defaults to 10000 or every row if fewer.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalPatchParams {
    pub model: Option<PathBuf>,
    pub shard: Option<PathBuf>,
    pub n: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct DiagDiversityArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Shard carrying an unembedding block.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shard: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pool: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub select: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagDiversityParams {
    pub shard: Option<PathBuf>,
    /// Defaults to the whole vocabulary.
    pub pool: Option<usize>,
    /// Defaults to `min(pool − 1, m)`.
    pub select: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct DiagEntropyArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shard: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l2: Option<f64>,
    /// Split seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagEntropyParams {
    pub shard: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub l2: f64,
    pub seeds: Vec<u64>,
}

impl Default for DiagEntropyParams {
    fn default() -> Self {
        Self { shard: None, manifest: None, l2: 1.0, seeds: vec![0, 1, 2] }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ProbeFewshotArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Probe dataset manifest.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shots: Option<Vec<usize>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub repeats: Option<usize>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<L2ModeArg>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeFewshotParams {
    pub manifest: Option<PathBuf>,
    pub shots: Vec<usize>,
    pub repeats: usize,
    pub mode: L2ModeArg,
    pub seed: u64,
}

impl Default for ProbeFewshotParams {
    fn default() -> Self {
        Self { manifest: None, shots: FEWSHOT_GRID.to_vec(), repeats: 5, mode: L2ModeArg::Cv, seed: 0 }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct CheckMixtureArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub world: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Representations whose rows follow the dataset's samples.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shard: Option<PathBuf>,
    /// Use only the first `rows` samples.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub null_repeats: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckMixtureParams {
    pub world: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub shard: Option<PathBuf>,
    pub rows: Option<usize>,
    pub null_repeats: usize,
    pub seed: u64,
}

impl Default for CheckMixtureParams {
    fn default() -> Self {
        Self { world: None, data: None, shard: None, rows: None, null_repeats: 5, seed: 0 }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ReproArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Single seed; shorthand for `--seeds N`.
    #[arg(long, conflicts_with = "seeds")]
    #[serde(skip)]
    pub seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dict_steps: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ReproParams {
    pub seeds: Vec<u64>,
    /// Overrides `dict.steps` when set.
    pub dict_steps: Option<usize>,
    #[serde(flatten)]
    pub config: ReproConfig,
}

impl Default for ReproParams {
    fn default() -> Self {
        Self { seeds: vec![0], dict_steps: None, config: ReproConfig::default() }
    }
}

/// Recursively overlays `top` onto `base`.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Config file, then flags, on top of the defaults of `P`. Unknown config
/// keys are rejected with the full list.
pub fn resolve<P: DeserializeOwned + Serialize + Default>(config: Option<&Path>, flags: &impl Serialize) -> Result<P> {
    let mut value = serde_json::to_value(P::default())?;
    let known: Vec<String> = value.as_object().map(|o| o.keys().cloned().collect()).unwrap_or_default();
    if let Some(path) = config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Value = serde_json::from_str(&text)?;
        let Value::Object(map) = cfg else {
            return Err(Error::InvalidConfig(vec![format!("{} is not a JSON object", path.display())]));
        };
        let unknown: Vec<String> =
            map.keys().filter(|k| !known.contains(k)).map(|k| format!("unknown config field '{k}'")).collect();
        if !unknown.is_empty() {
            return Err(Error::InvalidConfig(unknown));
        }
        merge(&mut value, Value::Object(map));
    }
    merge(&mut value, serde_json::to_value(flags)?);
    serde_json::from_value(value).map_err(|e| Error::InvalidConfig(vec![e.to_string()]))
}

fn require<'a>(problems: &mut Vec<String>, name: &str, v: &'a Option<PathBuf>) -> Option<&'a PathBuf> {
    if v.is_none() {
        problems.push(format!("{name} is required"));
    }
    v.as_ref()
}

fn check(problems: Vec<String>) -> Result<()> {
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(problems))
    }
}

/// Where reports and artifacts go.
struct Output {
    dir: Option<PathBuf>,
}

impl Output {
    fn new(dir: Option<PathBuf>) -> Result<Self> {
        if let Some(d) = &dir {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        Ok(Self { dir })
    }

    fn required_dir(&self) -> Result<&Path> {
        self.dir.as_deref().ok_or_else(|| Error::InvalidConfig(vec!["out is required for this command".into()]))
    }

    fn path(&self, name: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(name))
    }

    fn report<T: Serialize>(&self, name: &str, report: &EvalReport<T>) -> Result<()> {
        match self.path(name) {
            Some(p) => write_json(p, report),
            None => {
                use std::io::Write;
                let mut stdout = std::io::stdout().lock();
                match writeln!(stdout, "{}", report.to_json()?) {
                    Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e)),
                    _ => Ok(()),
                }
            }
        }
    }

    fn csv<R: Serialize>(&self, name: &str, rows: &[R]) -> Result<()> {
        match self.path(name) {
            Some(p) => write_csv(p, rows),
            None => Ok(()),
        }
    }
}

fn exp_clamp(exp: bool, range: (f64, f64)) -> Option<(f64, f64)> {
    exp.then_some(range)
}

fn load_model_shard_manifest(
    model: &Option<PathBuf>,
    shard: &Option<PathBuf>,
    manifest: &Option<PathBuf>,
) -> Result<(DictModel, ActivationShard, ConceptManifest)> {
    let mut problems = Vec::new();
    let model = require(&mut problems, "model", model);
    let shard = require(&mut problems, "shard", shard);
    let manifest = require(&mut problems, "manifest", manifest);
    check(problems)?;
    let model = read_checkpoint(model.unwrap())?;
    let shard = ActivationShard::read(shard.unwrap())?;
    let manifest = ConceptManifest::load(manifest.unwrap())?;
    manifest.validate_refs(shard.rows())?;
    Ok((model, shard, manifest))
}

#[derive(Debug, Serialize)]
struct SynthBody {
    num_latents: usize,
    edges: Vec<(usize, usize)>,
    mask_index: usize,
    samples: usize,
    context_dim: usize,
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let p: SynthParams = resolve(args.common.config.as_deref(), &args)?;
    let out = Output::new(args.common.out)?;
    let dir = out.required_dir()?;
    let world = world::sample_world(p.latents, p.edges, p.seed)?;
    let data = world::ancestral_sample(&world, p.samples, crate::rng::derive_seed(p.seed, 1))?;
    write_json(dir.join("world.json"), &world)?;
    write_json(dir.join("data.json"), &data)?;
    ActivationShard::from_matrix(&data.context_matrix())?
        .with_meta(r#"{"source":"synth","content":"context"}"#)
        .write(dir.join("context.cact"))?;
    let body = SynthBody {
        num_latents: world.num_latents(),
        edges: world.edges().to_vec(),
        mask_index: world.mask_index(),
        samples: data.len(),
        context_dim: world.context_dim(),
    };
    out.report("synth.json", &EvalReport::new(&p, p.seed, body)?)
}

#[derive(Debug, Serialize)]
struct TrainBaseBody {
    initial_loss: f64,
    final_loss: f64,
    train_accuracy: f64,
    m: usize,
    concepts: Vec<(String, usize)>,
}

fn cmd_train_base(args: TrainBaseArgs) -> Result<()> {
    let p: TrainBaseParams = resolve(args.common.config.as_deref(), &args)?;
    let mut problems = Vec::new();
    let world_path = require(&mut problems, "world", &p.world);
    let data_path = require(&mut problems, "data", &p.data);
    check(problems)?;
    let out = Output::new(args.common.out.clone())?;
    let dir = out.required_dir()?;
    let world: LatentWorld = read_json(world_path.unwrap())?;
    let data: SyntheticDataset = read_json(data_path.unwrap())?;
    let cfg = TrainConfig {
        steps: p.steps,
        batch_size: p.batch_size,
        lr: p.lr,
        warmup_steps: p.warmup_steps,
        seed: p.seed,
        ..TrainConfig::predictor_desk()
    };
    let fit = predictor::train_predictor(&data, p.m, &cfg)?;
    write_json(dir.join("predictor.json"), &fit.model)?;
    predictor::extract_representations(&fit.model, &data)?.write(dir.join("representations.cact"))?;

    let concepts: Vec<usize> = (0..world.num_latents()).filter(|&i| i != world.mask_index()).collect();
    let base = world::ancestral_sample(&world, p.pair_base, crate::rng::derive_seed(p.seed, 3))?;
    let pairs = pipeline::concept_pair_data(&world, &fit.model, &base, &concepts)?;
    ActivationShard::from_matrix(&pairs.representations)?
        .with_unembedding(&fit.model.g_table)?
        .write(dir.join("pairs.cact"))?;
    pairs.manifest.save(dir.join("concepts.json"))?;
    write_json(dir.join("pairs_data.json"), &pairs.dataset)?;
    let body = TrainBaseBody {
        initial_loss: fit.initial_loss,
        final_loss: fit.final_loss,
        train_accuracy: fit.train_accuracy,
        m: p.m,
        concepts: pairs.manifest.counts(),
    };
    out.report("train_base.json", &EvalReport::new(&p, p.seed, body)?)
}

#[derive(Debug, Serialize)]
struct TrainDictBody {
    kind: &'static str,
    norm: &'static str,
    surrogate: &'static str,
    m: usize,
    d_feat: usize,
    steps: usize,
    final_mse: f64,
    final_sparsity: f64,
    final_total: f64,
    eval_mse: f64,
    eval_sparsity: f64,
}

fn cmd_train_dict(args: TrainDictArgs) -> Result<()> {
    let p: TrainDictParams = resolve(args.common.config.as_deref(), &args)?;
    let mut problems = Vec::new();
    let shard_path = require(&mut problems, "shard", &p.shard);
    check(problems)?;
    let out = Output::new(args.common.out.clone())?;
    let dir = out.required_dir()?.to_path_buf();
    let shard = ActivationShard::read(shard_path.unwrap())?;
    let cfg = p.dict_config(shard.cols());
    let model = init_model(&cfg)?;
    let data = shard.to_matrix();
    let (model, trace) = train::train_dict_with(model, &data, &p.train, |step, m| {
        if step < p.train.steps {
            write_checkpoint(m, dir.join(format!("model.step{step}.cdmd")))
        } else {
            Ok(())
        }
    })?;
    write_checkpoint(&model, dir.join("model.cdmd"))?;
    trace.write_csv(dir.join("trace.csv"))?;
    let eval = train::loss_eval(&model, &train::clamp_inputs(&data, p.train.clamp), p.train.alpha)?;
    let last = trace.last().copied().expect("at least one step");
    let body = TrainDictBody {
        kind: model.kind.name(),
        norm: model.norm.name(),
        surrogate: model.surrogate.name(),
        m: model.m(),
        d_feat: model.d_feat(),
        steps: p.train.steps,
        final_mse: last.mse,
        final_sparsity: last.sparsity,
        final_total: last.total,
        eval_mse: eval.mse,
        eval_sparsity: eval.sparsity,
    };
    out.report("train_dict.json", &EvalReport::new(&p, p.train.seed, body)?)
}

fn cmd_eval_align(args: EvalAlignArgs) -> Result<()> {
    let p: EvalAlignParams = resolve(args.common.config.as_deref(), &args)?;
    let (model, shard, manifest) = load_model_shard_manifest(&p.model, &p.shard, &p.manifest)?;
    let out = Output::new(args.common.out)?;
    let report = eval::concept_alignment(&model, &shard.to_matrix(), &manifest, p.l2, exp_clamp(p.exp, p.exp_range))?;
    out.csv("align.csv", &report.rows())?;
    out.report("align.json", &EvalReport::new(&p, p.seed, report)?)
}

#[derive(Debug, Serialize)]
struct RankfracRow {
    concept: String,
    pairs: usize,
    mean: f64,
    std: f64,
}

#[derive(Debug, Serialize)]
struct RankfracBody {
    k: usize,
    thresholds: Vec<f64>,
    groups: usize,
    concepts: Vec<RankfracRow>,
    mean: f64,
}

fn cmd_eval_rankfrac(args: EvalRankfracArgs) -> Result<()> {
    let p: EvalRankfracParams = resolve(args.common.config.as_deref(), &args)?;
    let (model, shard, manifest) = load_model_shard_manifest(&p.model, &p.shard, &p.manifest)?;
    let out = Output::new(args.common.out)?;
    let reps = shard.to_matrix();
    let mut rows = Vec::new();
    for c in &manifest.concepts {
        let r = eval::model_rank_fraction(&model, &reps, &c.pairs, p.k, &p.thresholds, exp_clamp(p.exp, p.exp_range))?;
        rows.push(RankfracRow { concept: c.name.clone(), pairs: c.pairs.len(), mean: r.mean, std: r.std });
    }
    let mean = rows.iter().map(|r| r.mean).sum::<f64>() / rows.len() as f64;
    out.csv("rankfrac.csv", &rows)?;
    let body =
        RankfracBody { k: p.k, thresholds: p.thresholds.clone(), groups: model.feature_groups(), concepts: rows, mean };
    out.report("rankfrac.json", &EvalReport::new(&p, p.seed, body)?)
}

fn cmd_eval_patch(args: EvalPatchArgs) -> Result<()> {
    let p: EvalPatchParams = resolve(args.common.config.as_deref(), &args)?;
    let mut problems = Vec::new();
    let model = require(&mut problems, "model", &p.model);
    let shard = require(&mut problems, "shard", &p.shard);
    check(problems)?;
    let model = read_checkpoint(model.unwrap())?;
    let shard = ActivationShard::read(shard.unwrap())?;
    let out = Output::new(args.common.out)?;
    let n = p.n.unwrap_or_else(|| DEFAULT_PATCH_SAMPLES.min(shard.rows()));
    let report = eval::activation_patch_shard(&shard, &model, n, p.seed)?;
    out.report("patch.json", &EvalReport::new(&p, p.seed, report)?)
}

#[derive(Debug, Serialize)]
struct SpectrumRow {
    index: usize,
    singular_value: f64,
}

fn cmd_diag_diversity(args: DiagDiversityArgs) -> Result<()> {
    let p: DiagDiversityParams = resolve(args.common.config.as_deref(), &args)?;
    let mut problems = Vec::new();
    let shard = require(&mut problems, "shard", &p.shard);
    check(problems)?;
    let shard = ActivationShard::read(shard.unwrap())?;
    let u = shard.unembedding_matrix().ok_or(Error::MissingUnembedding)?;
    let out = Output::new(args.common.out)?;
    let pool = p.pool.unwrap_or(u.nrows());
    let select = p.select.unwrap_or_else(|| pool.saturating_sub(1).min(u.ncols()));
    let report = eval::diversity_diag(&u, pool, select, p.seed)?;
    let rows: Vec<SpectrumRow> = report
        .singular_values
        .iter()
        .enumerate()
        .map(|(index, &singular_value)| SpectrumRow { index, singular_value })
        .collect();
    out.csv("spectrum.csv", &rows)?;
    out.report("diversity.json", &EvalReport::new(&p, p.seed, report)?)
}

#[derive(Debug, Serialize)]
struct EntropyRow {
    concept: String,
    mean_bits: f64,
    mean_accuracy: f64,
}

#[derive(Debug, Serialize)]
struct EntropyBody {
    concepts: Vec<EntropyRow>,
    mean_bits: f64,
}

fn cmd_diag_entropy(args: DiagEntropyArgs) -> Result<()> {
    let p: DiagEntropyParams = resolve(args.common.config.as_deref(), &args)?;
    let mut problems = Vec::new();
    let shard = require(&mut problems, "shard", &p.shard);
    let manifest = require(&mut problems, "manifest", &p.manifest);
    check(problems)?;
    let shard = ActivationShard::read(shard.unwrap())?;
    let manifest = ConceptManifest::load(manifest.unwrap())?;
    manifest.validate_refs(shard.rows())?;
    let out = Output::new(args.common.out)?;
    let reps = shard.to_matrix();
    let mut rows = Vec::new();
    for c in &manifest.concepts {
        let (idx, labels) = c.rows_and_labels();
        let h = probe::heldout_entropy(&reps.select_rows(idx.iter()), &labels, p.l2, &p.seeds)?;
        rows.push(EntropyRow { concept: c.name.clone(), mean_bits: h.mean_bits, mean_accuracy: h.mean_accuracy });
    }
    let mean_bits = rows.iter().map(|r| r.mean_bits).sum::<f64>() / rows.len() as f64;
    out.csv("entropy.csv", &rows)?;
    let seed = p.seeds.first().copied().unwrap_or(0);
    out.report("entropy.json", &EvalReport::new(&p, seed, EntropyBody { concepts: rows, mean_bits })?)
}

#[derive(Debug, Serialize)]
struct FewshotRow {
    dataset: String,
    shots: usize,
    mean_auc: Option<f64>,
    std_auc: Option<f64>,
    skipped: Option<String>,
}

#[derive(Debug, Serialize)]
struct FewshotBody {
    mode: L2ModeArg,
    repeats: usize,
    results: Vec<FewshotRow>,
}

fn cmd_probe_fewshot(args: ProbeFewshotArgs) -> Result<()> {
    let p: ProbeFewshotParams = resolve(args.common.config.as_deref(), &args)?;
    let mut problems = Vec::new();
    let manifest = require(&mut problems, "manifest", &p.manifest);
    check(problems)?;
    let manifest = ProbeManifest::load(manifest.unwrap())?;
    let out = Output::new(args.common.out)?;
    let mode = match p.mode {
        L2ModeArg::Cv => L2Mode::Cv,
        L2ModeArg::Fixed => L2Mode::Fixed,
    };
    let mut rows = Vec::new();
    for d in &manifest.datasets {
        let shard = ActivationShard::read(&d.shard)?;
        let x = shard.select_rows(&d.rows.resolve())?;
        for &shots in &p.shots {
            let row = match probe::fewshot_auc(&x, &d.labels, shots, p.repeats, p.seed, mode) {
                Ok(r) => FewshotRow {
                    dataset: d.name.clone(),
                    shots,
                    mean_auc: Some(r.mean_auc),
                    std_auc: Some(r.std_auc),
                    skipped: None,
                },
                Err(Error::InsufficientSamples(msg)) => {
                    FewshotRow { dataset: d.name.clone(), shots, mean_auc: None, std_auc: None, skipped: Some(msg) }
                }
                Err(e) => return Err(e),
            };
            rows.push(row);
        }
    }
    out.csv("fewshot.csv", &rows)?;
    out.report(
        "fewshot.json",
        &EvalReport::new(&p, p.seed, FewshotBody { mode: p.mode, repeats: p.repeats, results: rows })?,
    )
}

#[derive(Debug, Serialize)]
struct MixtureBody {
    rows: usize,
    r_squared: f64,
    r_squared_per_dim: Vec<f64>,
    null_r_squared: f64,
    rank_deficient: bool,
    a_hat: Vec<Vec<f64>>,
    b_hat: Vec<f64>,
}

fn cmd_check_mixture(args: CheckMixtureArgs) -> Result<()> {
    let p: CheckMixtureParams = resolve(args.common.config.as_deref(), &args)?;
    let mut problems = Vec::new();
    let world = require(&mut problems, "world", &p.world);
    let data = require(&mut problems, "data", &p.data);
    let shard = require(&mut problems, "shard", &p.shard);
    check(problems)?;
    let world: LatentWorld = read_json(world.unwrap())?;
    let data: SyntheticDataset = read_json(data.unwrap())?;
    let shard = ActivationShard::read(shard.unwrap())?;
    let out = Output::new(args.common.out)?;
    let n = p.rows.unwrap_or(data.len()).min(data.len()).min(shard.rows());
    let data = data.head(n);
    let reps = shard.to_matrix().rows(0, n).into_owned();
    let logp = world::log_posterior_matrix(&world, &data)?;
    let fit = predictor::check_linear_mixture(&reps, &logp)?;
    let null = predictor::permutation_null_r2(&reps, &logp, p.null_repeats, p.seed)?;
    let body = MixtureBody {
        rows: n,
        r_squared: fit.r_squared,
        r_squared_per_dim: fit.r_squared_per_dim.clone(),
        null_r_squared: null,
        rank_deficient: fit.rank_deficient,
        a_hat: fit.a_hat.row_iter().map(|r| r.iter().copied().collect()).collect(),
        b_hat: fit.b_hat.iter().copied().collect(),
    };
    out.report("mixture.json", &EvalReport::new(&p, p.seed, body)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct ReproRow {
    pub seed: u64,
    pub probe_acc: f64,
    pub conca_mpc: f64,
    pub sae_mpc: f64,
    pub mpc_gap: f64,
    pub r2: f64,
    pub null_r2: f64,
    pub conca_mse: f64,
    pub sae_mse: f64,
}

#[derive(Debug, Serialize)]
struct ReproBody {
    runs: Vec<ReproRow>,
    probe_acc: f64,
    conca_mpc: f64,
    sae_mpc: f64,
    min_mpc_gap: f64,
    r2: f64,
    null_r2: f64,
}

fn cmd_repro(args: ReproArgs) -> Result<()> {
    let mut p: ReproParams = resolve(args.common.config.as_deref(), &args)?;
    if let Some(s) = args.seed {
        p.seeds = vec![s];
    }
    if let Some(steps) = p.dict_steps {
        p.config.dict.steps = steps;
    }
    if p.seeds.is_empty() {
        return Err(Error::InvalidConfig(vec!["seeds must not be empty".into()]));
    }
    let out = Output::new(args.common.out)?;
    let mut runs = Vec::new();
    for &seed in &p.seeds {
        let s = pipeline::repro_appendix_m(&p.config, seed)?;
        log::info!("seed {seed}: conca {:.3} sae {:.3}", s.conca_mpc, s.sae_mpc);
        runs.push(ReproRow {
            seed,
            probe_acc: s.probe_acc,
            conca_mpc: s.conca_mpc,
            sae_mpc: s.sae_mpc,
            mpc_gap: s.conca_mpc - s.sae_mpc,
            r2: s.r2,
            null_r2: s.null_r2,
            conca_mse: s.conca_mse,
            sae_mse: s.sae_mse,
        });
    }
    let mean = |f: fn(&ReproRow) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
    let body = ReproBody {
        probe_acc: mean(|r| r.probe_acc),
        conca_mpc: mean(|r| r.conca_mpc),
        sae_mpc: mean(|r| r.sae_mpc),
        min_mpc_gap: runs.iter().map(|r| r.mpc_gap).fold(f64::INFINITY, f64::min),
        r2: mean(|r| r.r2),
        null_r2: mean(|r| r.null_r2),
        runs: runs.clone(),
    };
    out.csv("repro.csv", &runs)?;
    out.report("repro.json", &EvalReport::new(&p, p.seeds[0], body)?)
}

/// Runs one parsed command.
pub fn execute(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        // a pool may already exist when called repeatedly in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::TrainBase(a) => cmd_train_base(a),
        Command::TrainDict(a) => cmd_train_dict(a),
        Command::EvalAlign(a) => cmd_eval_align(a),
        Command::EvalRankfrac(a) => cmd_eval_rankfrac(a),
        Command::EvalPatch(a) => cmd_eval_patch(a),
        Command::DiagDiversity(a) => cmd_diag_diversity(a),
        Command::DiagEntropy(a) => cmd_diag_entropy(a),
        Command::ProbeFewshot(a) => cmd_probe_fewshot(a),
        Command::CheckMixture(a) => cmd_check_mixture(a),
        Command::ReproAppendixM(a) => cmd_repro(a),
    }
}

/// Machine-readable failure printed on stderr.
pub fn error_json(err: &Error, exit_code: i32) -> String {
    let mut inner = Map::new();
    inner.insert("code".into(), Value::from(err.code()));
    inner.insert("message".into(), Value::from(err.to_string()));
    inner.insert("exit_code".into(), Value::from(exit_code));
    if let Error::InvalidConfig(problems) = err {
        inner.insert("problems".into(), Value::from(problems.clone()));
    }
    let mut outer = Map::new();
    outer.insert("error".into(), Value::Object(inner));
    Value::Object(outer).to_string()
}

/// Parses `args`, runs the command and returns the process exit code:
/// 0 on success, 1 on runtime errors, 2 on usage or configuration errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let _ = env_logger::Builder::new().parse_filters(&cli.log_level).try_init();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            let code = if matches!(e, Error::InvalidConfig(_)) { 2 } else { 1 };
            eprintln!("{}", error_json(&e, code));
            code
        }
    }
}
