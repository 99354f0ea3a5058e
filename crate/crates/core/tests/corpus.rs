//! The valid fuzz seeds must keep parsing as the formats evolve.

use std::path::PathBuf;

use dart_arena::cli::RunManifest;
use dart_arena::config::Config;
use dart_arena::nn::Checkpoint;
use dart_arena::policy::PoolManifest;
use dart_arena::trace::parse_jsonl;

fn seed(target: &str, name: &str) -> Vec<u8> {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "../../fuzz/corpus", target, name].iter().collect();
    std::fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn text(target: &str, name: &str) -> String {
    String::from_utf8(seed(target, name)).unwrap()
}

#[test]
fn checkpoint_seeds() {
    Checkpoint::decode(&seed("checkpoint_decode", "tracker_gru.ckpt")).unwrap();
    Checkpoint::decode(&seed("checkpoint_decode", "target.ckpt")).unwrap();
    assert!(Checkpoint::decode(&seed("checkpoint_decode", "truncated.ckpt")).is_err());
}

#[test]
fn config_seeds() {
    Config::parse(&text("config_json", "tiny.json")).unwrap();
    assert_eq!(Config::parse(&text("config_json", "empty.json")).unwrap(), Config::default());
    assert!(Config::parse(&text("config_json", "unknown_key.json")).is_err());
}

#[test]
fn trace_pool_and_manifest_seeds() {
    assert_eq!(parse_jsonl(&text("trace_jsonl", "pid_nav1.jsonl")).unwrap().len(), 3);
    PoolManifest::parse(&text("pool_manifest", "index.json")).unwrap();
    RunManifest::parse(&text("run_manifest", "train_meta.json")).unwrap();
    RunManifest::parse(&text("run_manifest", "eval.json")).unwrap();
}
