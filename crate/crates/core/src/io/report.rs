//! Report envelopes and JSON/CSV writers.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const TOOL_NAME: &str = "conca-lab";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// A report body wrapped with the provenance fields every emitted report
/// carries. No timestamps are recorded, so identical inputs give identical
/// bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport<T> {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    #[serde(flatten)]
    pub body: T,
}

impl<T: Serialize> EvalReport<T> {
    pub fn new(config: &impl Serialize, seed: u64, body: T) -> Result<Self> {
        Ok(Self {
            tool: TOOL_NAME.to_string(),
            version: TOOL_VERSION.to_string(),
            config_hash: config_hash(config)?,
            seed,
            body,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// SHA-256 of the compact JSON encoding of `config`, hex encoded.
pub fn config_hash(config: &impl Serialize) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes serializable records as comma-delimited CSV with a header row.
pub fn write_csv<R: Serialize>(path: impl AsRef<Path>, records: &[R]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv_to(file, records)
}

pub fn write_csv_to<W: std::io::Write, R: Serialize>(w: W, records: &[R]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in records {
        wtr.serialize(r)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        step: usize,
        value: f64,
    }

    #[test]
    fn csv_has_header_and_dot_decimals() {
        let mut buf = Vec::new();
        write_csv_to(&mut buf, &[Row { step: 1, value: 0.5 }, Row { step: 2, value: -1.25 }]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "step,value\n1,0.5\n2,-1.25\n");
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = config_hash(&serde_json::json!({"lr": 0.1, "steps": 3})).unwrap();
        let b = config_hash(&serde_json::json!({"lr": 0.1, "steps": 3})).unwrap();
        let c = config_hash(&serde_json::json!({"lr": 0.1, "steps": 4})).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn report_flattens_body() {
        #[derive(Serialize)]
        struct Body {
            mpc: f64,
        }
        let r = EvalReport::new(&1u32, 7, Body { mpc: 0.5 }).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(v["mpc"], 0.5);
        assert_eq!(v["seed"], 7);
        assert_eq!(v["tool"], TOOL_NAME);
    }
}
