//! Concept manifests (counterfactual pair lists) and probe dataset manifests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One named concept and its counterfactual pairs.
///
/// Each pair `(a, b)` refers to two shard rows: `a` carries the concept's
/// first value (label 0), `b` the second (label 1).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptPairs {
    pub name: String,
    pub pairs: Vec<(usize, usize)>,
}

impl ConceptPairs {
    /// Rows of both sides, side A first, with the matching 0/1 labels.
    pub fn rows_and_labels(&self) -> (Vec<usize>, Vec<usize>) {
        let mut rows: Vec<usize> = self.pairs.iter().map(|p| p.0).collect();
        rows.extend(self.pairs.iter().map(|p| p.1));
        let mut labels = vec![0; self.pairs.len()];
        labels.extend(std::iter::repeat_n(1, self.pairs.len()));
        (rows, labels)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptManifest {
    pub concepts: Vec<ConceptPairs>,
}

impl ConceptManifest {
    /// Parses and structurally validates a manifest. Row references are
    /// checked separately by [`ConceptManifest::validate_refs`], since the
    /// shard size is not known here.
    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.concepts.is_empty() {
            return Err(Error::Manifest("concept list is empty".into()));
        }
        let mut problems = Vec::new();
        for c in &self.concepts {
            if c.pairs.len() < 2 {
                problems.push(format!("concept '{}' has {} pairs, at least 2 required", c.name, c.pairs.len()));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Manifest(problems.join("; ")))
        }
    }

    pub fn validate_refs(&self, rows: usize) -> Result<()> {
        let mut problems = Vec::new();
        for c in &self.concepts {
            for (i, &(a, b)) in c.pairs.iter().enumerate() {
                if a >= rows || b >= rows {
                    problems.push(format!("concept '{}' pair {i} ({a}, {b}) out of range for {rows} rows", c.name));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Manifest(problems.join("; ")))
        }
    }

    /// Pair counts per concept in manifest order. Duplicates are counted.
    pub fn counts(&self) -> Vec<(String, usize)> {
        self.concepts.iter().map(|c| (c.name.clone(), c.pairs.len())).collect()
    }
}

/// Where a probe dataset's feature rows come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowSelection {
    /// Half-open range `[start, end)`.
    Range(usize, usize),
    Indices(Vec<usize>),
}

impl RowSelection {
    pub fn resolve(&self) -> Vec<usize> {
        match self {
            RowSelection::Range(a, b) => (*a..*b).collect(),
            RowSelection::Indices(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeDataset {
    pub name: String,
    pub shard: PathBuf,
    pub rows: RowSelection,
    pub labels: Vec<usize>,
}

/// A list of labelled probing datasets for few-shot and out-of-distribution runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeManifest {
    pub datasets: Vec<ProbeDataset>,
}

impl ProbeManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Self = serde_json::from_str(&text)?;
        if m.datasets.is_empty() {
            return Err(Error::Manifest("dataset list is empty".into()));
        }
        // shard paths are relative to the manifest's directory
        if let Some(dir) = path.parent() {
            for d in &mut m.datasets {
                if d.shard.is_relative() {
                    d.shard = dir.join(&d.shard);
                }
            }
        }
        for d in &m.datasets {
            let n = d.rows.resolve().len();
            if n != d.labels.len() {
                return Err(Error::Manifest(format!(
                    "dataset '{}' selects {n} rows but has {} labels",
                    d.name,
                    d.labels.len()
                )));
            }
        }
        Ok(m)
    }
}
