//! Supervised concept alignment: probe logits against dictionary features,
//! Pearson correlations, and a one-to-one Hungarian matching.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::hungarian::hungarian;
use super::pearson::pearson_iter;
use crate::dict::DictModel;
use crate::error::{Error, Result};
use crate::io::ConceptManifest;
use crate::probe::{probe_logits, train_probe};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub concepts: Vec<String>,
    /// `concepts × d_feat`.
    pub correlation_matrix: Vec<Vec<f64>>,
    /// Feature matched to each concept.
    pub assignment: Vec<usize>,
    pub per_concept_pearson: Vec<f64>,
    /// Mean of the matched correlations (MPC).
    pub mpc: f64,
    /// Constant feature columns, counted over all concepts.
    pub degenerate_columns: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptRow {
    pub concept: String,
    pub feature: usize,
    pub pearson: f64,
}

impl AlignmentReport {
    pub fn rows(&self) -> Vec<ConceptRow> {
        self.concepts
            .iter()
            .zip(&self.assignment)
            .zip(&self.per_concept_pearson)
            .map(|((c, &f), &p)| ConceptRow { concept: c.clone(), feature: f, pearson: p })
            .collect()
    }
}

/// Builds `R[i, d] = pearson(features_i[:, d], logits_i)` and matches
/// concepts to features. `features[i]` holds the feature rows of concept
/// `i`'s samples, aligned with `logits[i]`.
pub fn align_features(names: &[String], features: &[DMatrix<f64>], logits: &[Vec<f64>]) -> Result<AlignmentReport> {
    if names.len() != features.len() || features.len() != logits.len() {
        return Err(Error::Dimension(format!(
            "{} names, {} feature blocks, {} logit vectors",
            names.len(),
            features.len(),
            logits.len()
        )));
    }
    let Some(first) = features.first() else {
        return Err(Error::InvalidArgument("no concepts to align".into()));
    };
    let d = first.ncols();
    if features.iter().any(|f| f.ncols() != d) {
        return Err(Error::Dimension("feature blocks disagree on d_feat".into()));
    }
    if d < names.len() {
        return Err(Error::InvalidArgument(format!("{} concepts but only {d} features", names.len())));
    }
    let rows: Vec<(Vec<f64>, usize)> = features
        .par_iter()
        .zip(logits)
        .map(|(f, s)| {
            if f.nrows() != s.len() || s.len() < 2 {
                return Err(Error::Dimension(format!("{} feature rows, {} logits", f.nrows(), s.len())));
            }
            let mut degenerate = 0;
            let row = (0..d)
                .map(|c| {
                    let p = pearson_iter(f.column(c).iter().copied(), s.iter().copied(), s.len());
                    degenerate += p.degenerate as usize;
                    p.value
                })
                .collect();
            Ok((row, degenerate))
        })
        .collect::<Result<_>>()?;
    let degenerate_columns = rows.iter().map(|r| r.1).sum();
    let correlation_matrix: Vec<Vec<f64>> = rows.into_iter().map(|r| r.0).collect();
    let assignment = hungarian(&correlation_matrix)?;
    let per_concept: Vec<f64> = assignment.columns.iter().enumerate().map(|(i, &j)| correlation_matrix[i][j]).collect();
    Ok(AlignmentReport {
        concepts: names.to_vec(),
        mpc: per_concept.iter().sum::<f64>() / per_concept.len() as f64,
        per_concept_pearson: per_concept,
        assignment: assignment.columns,
        correlation_matrix,
        degenerate_columns,
    })
}

/// Alignment of a model's evaluation features (see
/// [`DictModel::eval_features`]) with precomputed concept logits.
/// `representations[i]` holds the raw representations of concept `i`'s
/// samples.
pub fn eval_alignment(
    model: &DictModel,
    names: &[String],
    representations: &[DMatrix<f64>],
    logits: &[Vec<f64>],
    exp_clamp: Option<(f64, f64)>,
) -> Result<AlignmentReport> {
    if model.d_feat() < names.len() {
        return Err(Error::InvalidArgument(format!(
            "{} concepts but the model has {} features",
            names.len(),
            model.d_feat()
        )));
    }
    let features: Vec<DMatrix<f64>> =
        representations.iter().map(|r| model.eval_features(r, exp_clamp)).collect::<Result<_>>()?;
    align_features(names, &features, logits)
}

/// Per-concept representations, labels and probe logits drawn from a
/// manifest over a shard.
#[derive(Debug, Clone)]
pub struct ConceptProbes {
    pub names: Vec<String>,
    pub representations: Vec<DMatrix<f64>>,
    pub labels: Vec<Vec<usize>>,
    pub logits: Vec<Vec<f64>>,
}

/// Trains one binary probe per concept on all of its pairs (side A is
/// label 0) and records its class-1 logit on those same samples.
pub fn concept_probes(shard: &DMatrix<f64>, manifest: &ConceptManifest, l2: f64) -> Result<ConceptProbes> {
    manifest.validate()?;
    manifest.validate_refs(shard.nrows())?;
    let per: Vec<(DMatrix<f64>, Vec<usize>, Vec<f64>)> = manifest
        .concepts
        .par_iter()
        .map(|c| {
            let (rows, labels) = c.rows_and_labels();
            let reps = shard.select_rows(rows.iter());
            let probe = train_probe(&reps, &labels, l2)?;
            let logits = probe_logits(&probe, &reps)?.column(0).iter().copied().collect();
            Ok((reps, labels, logits))
        })
        .collect::<Result<_>>()?;
    let mut out = ConceptProbes {
        names: manifest.concepts.iter().map(|c| c.name.clone()).collect(),
        representations: Vec::with_capacity(per.len()),
        labels: Vec::with_capacity(per.len()),
        logits: Vec::with_capacity(per.len()),
    };
    for (r, l, s) in per {
        out.representations.push(r);
        out.labels.push(l);
        out.logits.push(s);
    }
    Ok(out)
}

/// The full supervised evaluation: probes per concept, model features on
/// the same samples, correlation matrix, matching and MPC.
pub fn concept_alignment(
    model: &DictModel,
    shard: &DMatrix<f64>,
    manifest: &ConceptManifest,
    l2: f64,
    exp_clamp: Option<(f64, f64)>,
) -> Result<AlignmentReport> {
    let probes = concept_probes(shard, manifest, l2)?;
    eval_alignment(model, &probes.names, &probes.representations, &probes.logits, exp_clamp)
}
