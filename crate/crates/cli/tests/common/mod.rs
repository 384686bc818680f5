#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn lifepred(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lifepred")).args(args).output().expect("binary runs")
}

/// Runs and panics with stderr on a non-zero exit.
pub fn ok(args: &[&str]) -> Output {
    let out = lifepred(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/cycles")
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

pub const QUICK_MCMC: [&str; 8] = ["--warmup", "150", "--samples", "100", "--thin", "2", "--chains", "2"];
