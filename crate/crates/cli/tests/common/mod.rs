#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn rffs() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_rffs"));
    c.env_remove("RFFS_SEED");
    c
}

pub fn run_in(dir: &Path, args: &[&str]) -> Output {
    rffs().current_dir(dir).args(args).output().expect("spawn rffs")
}

/// Runs and panics with stderr unless the exit status is 0.
pub fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run_in(dir, args);
    assert!(
        out.status.success(),
        "rffs {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A configuration small enough for 512-point blocks.
pub const SMALL_CONFIG: &str = r#"{
  "n_target": 512,
  "k": 8,
  "fusion_k": 4,
  "delta": 2,
  "dilations": [1, 2],
  "encoder_channels": [16, 16, 16],
  "decoder_channels": [16, 16, 16],
  "branch_channels": 8,
  "fusion_channels": 16,
  "batch_size": 2,
  "epochs": 2
}"#;

pub fn write_small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.json");
    std::fs::write(&p, SMALL_CONFIG).unwrap();
    p
}

/// Synthesises a scene and partitions it into blocks under `dir/blocks`.
pub fn scene_blocks(dir: &Path, points: usize, extent: f64, block_size: f64, seed: u64) -> PathBuf {
    let (p, e, b, s) = (points.to_string(), extent.to_string(), block_size.to_string(), seed.to_string());
    ok(dir, &["synth", "--out", "scene.txt", "--points", &p, "--extent", &e, "--seed", &s]);
    ok(dir, &["blocks", "--input", "scene.txt", "--block-size", &b, "--out-dir", "blocks"]);
    dir.join("blocks")
}

pub fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.path().is_file())
        .map(|e| {
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}
