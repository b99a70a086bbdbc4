//! Concept component analysis workbench.
//!
//! Trains sparse linear dictionaries (ConCA) and SAE baselines on activation
//! matrices, and evaluates the features they learn against supervised
//! concept probes. A small discrete latent-variable world with a toy
//! next-token predictor provides ground truth for end-to-end checks.

pub mod cli;
pub mod dict;
pub mod error;
pub mod eval;
pub mod io;
pub mod pipeline;
pub mod predictor;
pub mod probe;
pub mod rng;
pub mod train;
pub mod world;

pub use dict::{init_model, DictConfig, DictModel, Mode, ModelKind, Norm, Surrogate};
pub use error::{Error, Result};
pub use io::{ActivationShard, ConceptManifest, EvalReport};
pub use train::{loss_eval, train_dict, train_dict_matrix, LossTrace, TrainConfig};
pub use world::{ancestral_sample, make_counterfactuals, sample_world, LatentWorld, SyntheticDataset};
