//! Round-trip activation shards, dictionary checkpoints and a concept
//! manifest through their on-disk formats.
//!
//! `cargo run --release --example shards_and_checkpoints`

use conca_lab::dict::{read_checkpoint, write_checkpoint};
use conca_lab::io::{ConceptPairs, EvalReport};
use conca_lab::{init_model, ActivationShard, ConceptManifest, DictConfig, Norm, Surrogate};
use nalgebra::DMatrix;

fn main() -> conca_lab::Result<()> {
    let dir = std::env::temp_dir().join("conca-lab-example");
    std::fs::create_dir_all(&dir).map_err(|e| conca_lab::Error::io(&dir, e))?;

    let reps = DMatrix::from_fn(6, 4, |i, j| (i * 4 + j) as f64 / 10.0);
    let unembed = DMatrix::from_fn(3, 4, |i, j| if i == j { 1.0 } else { 0.0 });
    let shard = ActivationShard::from_matrix(&reps)?.with_unembedding(&unembed)?.with_meta(r#"{"layer":0}"#);
    shard.write(dir.join("reps.cact"))?;
    let back = ActivationShard::read(dir.join("reps.cact"))?;
    println!("shard {}x{} vocab {:?}, equal {}", back.rows(), back.cols(), back.vocab(), back == shard);

    let model = init_model(&DictConfig::conca(4, 8, Norm::group(2), Surrogate::Softplus).with_seed(1))?;
    write_checkpoint(&model, dir.join("model.cdmd"))?;
    let restored = read_checkpoint(dir.join("model.cdmd"))?;
    println!(
        "checkpoint {} / {} / {}, identical {}",
        restored.kind.name(),
        restored.norm.name(),
        restored.surrogate.name(),
        restored == model
    );

    let manifest =
        ConceptManifest { concepts: vec![ConceptPairs { name: "color".into(), pairs: vec![(0, 1), (2, 3), (4, 5)] }] };
    manifest.validate_refs(back.rows())?;
    manifest.save(dir.join("concepts.json"))?;
    println!("manifest {:?}", ConceptManifest::load(dir.join("concepts.json"))?.counts());

    let report = EvalReport::new(&manifest, 0, serde_json::json!({ "rows": back.rows() }))?;
    println!("{}", report.to_json()?);
    Ok(())
}
