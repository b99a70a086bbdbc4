mod common;

use common::gaussian;
use conca_lab::dict::{read_checkpoint, write_checkpoint};
use conca_lab::io::{ConceptPairs, EvalReport, ProbeManifest, RowSelection};
use conca_lab::{
    init_model, train_dict_matrix, ActivationShard, ConceptManifest, DictConfig, Error, Norm, Surrogate, TrainConfig,
};
use proptest::prelude::*;

#[test]
fn truncated_shard_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.cact");
    ActivationShard::from_matrix(&gaussian(40, 8, 1)).unwrap().write(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    for cut in [3, 20, bytes.len() - 1] {
        std::fs::write(&path, &bytes[..cut]).unwrap();
        let err = ActivationShard::read(&path).unwrap_err();
        assert_eq!(err.code(), "truncated", "cut at {cut}: {err}");
    }
}

#[test]
fn twenty_seven_concept_manifest_counts() {
    let mut concepts: Vec<ConceptPairs> = (0..26)
        .map(|c| ConceptPairs { name: format!("concept_{c}"), pairs: (0..50).map(|i| (2 * i, 2 * i + 1)).collect() })
        .collect();
    concepts
        .insert(0, ConceptPairs { name: "country-capital".into(), pairs: (0..158).map(|i| (i, 158 + i)).collect() });
    let manifest = ConceptManifest { concepts };
    let dir = tempfile::tempdir().unwrap();
    manifest.save(dir.path().join("c.json")).unwrap();
    let back = ConceptManifest::load(dir.path().join("c.json")).unwrap();
    let counts = back.counts();
    assert_eq!(counts.len(), 27);
    assert_eq!(counts[0], ("country-capital".to_string(), 158));
    assert!(counts[1..].iter().all(|(_, n)| *n == 50));
    back.validate_refs(316).unwrap();
    assert!(back.validate_refs(315).is_err());
}

#[test]
fn probe_manifest_resolves_shards_next_to_it() {
    let dir = tempfile::tempdir().unwrap();
    ActivationShard::from_matrix(&gaussian(10, 3, 2)).unwrap().write(dir.path().join("x.cact")).unwrap();
    let text = r#"{"datasets":[{"name":"d","shard":"x.cact","rows":{"range":[2,6]},"labels":[0,1,0,1]}]}"#;
    std::fs::write(dir.path().join("p.json"), text).unwrap();
    let m = ProbeManifest::load(dir.path().join("p.json")).unwrap();
    assert_eq!(m.datasets[0].rows, RowSelection::Range(2, 6));
    let shard = ActivationShard::read(&m.datasets[0].shard).unwrap();
    assert_eq!(shard.select_rows(&m.datasets[0].rows.resolve()).unwrap().nrows(), 4);
}

#[test]
fn trained_batch_norm_checkpoint_round_trips() {
    let data = gaussian(300, 5, 3);
    let model = init_model(&DictConfig::conca(5, 10, Norm::batch(), Surrogate::Selu)).unwrap();
    let cfg = TrainConfig { steps: 20, batch_size: 64, lr: 1e-2, warmup_steps: 0, ..TrainConfig::default() };
    let (model, _) = train_dict_matrix(model, &data, &cfg).unwrap();
    assert!(model.running.is_some());
    let dir = tempfile::tempdir().unwrap();
    write_checkpoint(&model, dir.path().join("m.cdmd")).unwrap();
    assert_eq!(read_checkpoint(dir.path().join("m.cdmd")).unwrap(), model);
}

#[test]
fn eval_report_carries_provenance() {
    let report = EvalReport::new(&serde_json::json!({"k": 8}), 7, serde_json::json!({"mpc": 0.5})).unwrap();
    let v: serde_json::Value = serde_json::from_str(&report.to_json().unwrap()).unwrap();
    assert_eq!(v["tool"], "conca-lab");
    assert_eq!(v["seed"], 7);
    assert_eq!(v["mpc"], 0.5);
    assert_eq!(v["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn missing_file_is_an_io_error() {
    assert!(matches!(ActivationShard::read("/definitely/not/here.cact"), Err(Error::Io { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn shard_round_trip_is_bit_identical(rows in 1usize..30, cols in 1usize..12, vocab in 0usize..5, seed in any::<u64>()) {
        let mut shard = ActivationShard::from_matrix(&gaussian(rows, cols, seed)).unwrap();
        if vocab > 0 {
            shard = shard.with_unembedding(&gaussian(vocab, cols, seed ^ 1)).unwrap();
        }
        let mut buf = Vec::new();
        shard.write_to(&mut buf).unwrap();
        let back = ActivationShard::read_from(buf.as_slice()).unwrap();
        prop_assert_eq!(back.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), shard.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(back, shard);
    }
}
