// Copyright 2026 The gkd Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Exit codes and run-directory behavior of the `gkd` binary.

mod common;

use std::path::Path;
use std::process::Command;

fn gkd(args: &[&str], config: &Path, out: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_gkd"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(["--seed", "5"])
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("run.cfg");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    for bad in [
        "[split]\noverlap_ratio = 2\n",
        "[nope]\n",
        "[dataset]\nclasses = many\n",
        "seed = 1\n",
    ] {
        let cfg = write(dir.path(), bad);
        let out = gkd(&["train-teacher"], &cfg, &dir.path().join("o"));
        assert_eq!(
            out.status.code(),
            Some(2),
            "{bad:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let out = gkd(
        &["train-teacher"],
        &dir.path().join("absent.cfg"),
        &dir.path().join("o"),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_checkpoint_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), common::SMALL_CONFIG);
    let missing = dir.path().join("no-teacher");
    let out = gkd(
        &["distill", "--teacher", missing.to_str().unwrap()],
        &cfg,
        &dir.path().join("o"),
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn divergence_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        &format!(
            "{}\n[teacher]\nlr = 1e300\n",
            common::SMALL_CONFIG.replace("[teacher]\nepochs = 3\nmilestones = 2\n", "")
        ),
    );
    let out = gkd(&["train-teacher"], &cfg, &dir.path().join("o"));
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn manifest_records_hash_seed_and_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), common::SMALL_CONFIG);
    let out_dir = dir.path().join("teacher-run");
    let out = gkd(&["train-teacher"], &cfg, &out_dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    // The hash covers the effective config, seed override included.
    let mut effective = gkd::config::ExperimentConfig::parse(common::SMALL_CONFIG).unwrap();
    effective.seed = 5;
    let expected = effective.hash();
    assert_eq!(
        std::fs::read_to_string(out_dir.join("config.txt")).unwrap(),
        effective.serialize()
    );
    assert_eq!(manifest["config_hash"], serde_json::json!(expected));
    assert_eq!(manifest["seed"], serde_json::json!(5));
    let artifacts = manifest["artifacts"].as_array().unwrap();
    assert!(!artifacts.is_empty());
    for a in artifacts {
        assert!(out_dir.join(a.as_str().unwrap()).exists(), "{a}");
    }

    // A finished run directory is not overwritten.
    let again = gkd(&["train-teacher"], &cfg, &out_dir);
    assert!(!again.status.success());
}
