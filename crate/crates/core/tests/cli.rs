/*
Copyright 2026 The isohash Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/

use std::path::Path;
use std::process::{Command, Output};

fn isohash(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_isohash"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "off")
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn gen_random(dir: &Path) {
    let out = isohash(dir, &["gen", "--kind", "random", "--q", "40", "--n", "6", "--seed", "2", "--preprocess", "--out", "r.bin"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(isohash(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        isohash(dir.path(), &["train", "--data", "x.bin", "--secants", "some", "--out", "m.bin"]).status.code(),
        Some(2)
    );
    gen_random(dir.path());
    let out = isohash(dir.path(), &["train", "--data", "r.bin", "--algo", "lsh", "--secants", "bre", "--out", "m.bin"]);
    assert_eq!(out.status.code(), Some(2));
    let out = isohash(dir.path(), &["train", "--data", "r.bin", "--bits", "0", "--out", "m.bin"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("m.bin").exists());
}

#[test]
fn missing_or_mismatched_data_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = isohash(dir.path(), &["train", "--data", "nowhere.bin", "--out", "m.bin"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.bin"));

    gen_random(dir.path());
    let out = isohash(dir.path(), &["train", "--data", "r.bin", "--algo", "lsh", "--bits", "8", "--out", "m.bin"]);
    assert_eq!(out.status.code(), Some(0));
    let out = isohash(dir.path(), &["gen", "--kind", "random", "--q", "40", "--n", "9", "--out", "wide.bin"]);
    assert_eq!(out.status.code(), Some(0));
    let out = isohash(dir.path(), &["eval", "--model", "m.bin", "--data", "wide.bin", "--metric", "delta"]);
    assert_eq!(out.status.code(), Some(3));

    std::fs::write(dir.path().join("junk.bin"), b"not a model").unwrap();
    let out = isohash(dir.path(), &["eval", "--model", "junk.bin", "--data", "r.bin", "--metric", "delta"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn train_then_eval_agree_on_delta() {
    let dir = tempfile::tempdir().unwrap();
    gen_random(dir.path());
    let out = isohash(
        dir.path(),
        &["train", "--data", "r.bin", "--bits", "8", "--max-iters", "60", "--out", "m.bin", "--progress", "p.jsonl"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let trained = json(&out);
    let progress = std::fs::read_to_string(dir.path().join("p.jsonl")).unwrap();
    assert!(progress.lines().count() >= 1);
    for line in progress.lines() {
        let _: serde_json::Value = serde_json::from_str(line).unwrap();
    }
    let out = isohash(dir.path(), &["eval", "--model", "m.bin", "--data", "r.bin", "--metric", "delta"]);
    assert_eq!(out.status.code(), Some(0));
    let evaluated = json(&out);
    let a = trained["delta"].as_f64().unwrap();
    let b = evaluated["value"].as_f64().or_else(|| evaluated["delta"].as_f64()).unwrap();
    assert!((a - b).abs() < 1e-12, "train reported {a}, eval {b}");
}

#[test]
fn repeated_runs_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    gen_random(dir.path());
    let args = ["train", "--data", "r.bin", "--algo", "nibh-cg", "--bits", "6", "--init-sample", "200", "--violator-batch", "50", "--max-iters", "40", "--out", "m.bin"];
    let first = isohash(dir.path(), &args);
    let model = std::fs::read(dir.path().join("m.bin")).unwrap();
    let second = isohash(dir.path(), &args);
    assert_eq!(first.status.code(), Some(0));
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(model, std::fs::read(dir.path().join("m.bin")).unwrap());
}

#[test]
fn fig1_demo_and_lemma_check_pass() {
    let dir = tempfile::tempdir().unwrap();
    let out = isohash(dir.path(), &["demo-fig1", "--csv", "profile.csv"]);
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("profile.csv")).unwrap();
    assert!(csv.starts_with("angle,linf,l2\n"));
    assert!(csv.lines().count() > 1000);
    let out = isohash(dir.path(), &["check", "lemma1", "--alpha", "4", "--sigma", "1", "--samples", "20000"]);
    assert_eq!(out.status.code(), Some(0));
}
