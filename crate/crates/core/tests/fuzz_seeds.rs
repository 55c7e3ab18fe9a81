//! The checked-in fuzz corpus must keep exercising the success paths.

use std::path::PathBuf;

use regada::config::TrainConfig;
use regada::io::{parse_manifest_records, tensor_file, RawCheckpoint, SplitFile, Vocabulary};
use regada::synth::SynthConfig;
use regada::train::Checkpoint;

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| {
            let bytes = std::fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn text(bytes: &[u8]) -> &str {
    std::str::from_utf8(bytes).unwrap()
}

#[test]
fn every_seed_decodes() {
    for (p, b) in seeds("tensor_file") {
        let t = tensor_file::decode(&b).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(tensor_file::encode(&t), b);
    }
    for (p, b) in seeds("checkpoint") {
        let raw = RawCheckpoint::decode(&b).unwrap();
        assert_eq!(raw.encode(), b);
        Checkpoint::from_raw(&raw).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, b) in seeds("manifest") {
        assert!(!parse_manifest_records(text(&b)).unwrap().is_empty(), "{}", p.display());
    }
    for (_, b) in seeds("vocab") {
        Vocabulary::parse(text(&b)).unwrap();
    }
    for (_, b) in seeds("split_file") {
        SplitFile::parse(text(&b)).unwrap();
    }
    for (p, b) in seeds("train_config") {
        TrainConfig::parse(text(&b)).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (_, b) in seeds("synth_config") {
        serde_json::from_slice::<SynthConfig>(&b).unwrap().validate().unwrap();
    }
}
