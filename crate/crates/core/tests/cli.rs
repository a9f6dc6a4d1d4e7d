//! End-to-end runs of the `dispersal` binary.

use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dispersal"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, body).unwrap();
    p
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn airy_mode_reports_a0() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin().args(["airy", "--out"]).arg(dir.path()).status().unwrap();
    assert!(status.success());
    let v = read_json(&dir.path().join("airy.json"));
    let a0 = v["result"]["A0"].as_f64().unwrap();
    assert!((a0 - 1.01879297).abs() <= 1e-8);
    assert_eq!(v["format"], "dispersal-report-v1");
    let csv = std::fs::read_to_string(dir.path().join("eta.csv")).unwrap();
    assert!(csv.starts_with("# format=airy-v1\n# config_sha256="));
}

#[test]
fn trivial_steady_state_is_constant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"habitat": {"preset": "one"}, "grid": {"extents": [1.0], "cells": [16]}, "trait_cells": 30}"#);
    let out = dir.path().join("out");
    // Constant m without the flag is a configuration error.
    let status = bin().args(["steady", "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(2));
    let status = bin().args(["steady", "--trivial", "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert!(status.success());
    let cp = read_json(&out.join("checkpoint.json"));
    assert_eq!(cp["format"], "dispersal-v1");
    let level = 1.0 / (2.0 - 0.5);
    assert!(cp["u"].as_array().unwrap().iter().all(|v| (v.as_f64().unwrap() - level).abs() <= 1e-8));
    // The invariant suite on the checkpoint passes.
    let check = bin().arg("--check").arg(out.join("checkpoint.json")).output().unwrap();
    assert!(check.status.success(), "{}", String::from_utf8_lossy(&check.stderr));
    let report: Value = serde_json::from_slice(&check.stdout).unwrap();
    assert!((report["mu1"].as_f64().unwrap() + 1.0).abs() < 1e-8);
}

#[test]
fn schema_violation_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"alpha_lo": "low"}"#);
    let out = bin().args(["steady", "--config"]).arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpha_lo"));
}

#[test]
fn sweep_outputs_are_complete_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"mode": "sweep", "grid": {"extents": [1.0], "cells": [24]}, "habitat": {"preset": "cosine", "amplitude": 0.8},
            "alpha_lo": 0.2, "alpha_hi": 1.2, "epsilons": [0.2, 0.1, 0.05, 0.02], "trait_cells": 160}"#,
    );
    let run = |out: &Path, threads: &str| {
        let o = bin().arg("run").arg("--config").arg(&cfg).arg("--out").arg(out).args(["--threads", threads]).output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    run(&a, "1");
    run(&b, "1");
    run(&c, "2");
    let csv = std::fs::read_to_string(a.join("sweep.csv")).unwrap();
    assert_eq!(csv, std::fs::read_to_string(b.join("sweep.csv")).unwrap());
    // Each ε is solved independently, so the thread count does not matter.
    assert_eq!(csv, std::fs::read_to_string(c.join("sweep.csv")).unwrap());
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "epsilon,sigma0,sigma1,sup_u,uhat_err,profile_err,beta_hat,mass_frac");
    assert_eq!(rows.len(), 5);
    assert!(csv.contains("# format=sweep-v1"));
    assert!(csv.contains("sigma_slope="));
    let json = read_json(&a.join("sweep.json"));
    assert_eq!(json["format"], "sweep-v1");
    assert!(json["fits"]["sigma_slope"]["slope"].is_number());
    let hash = json["config_hash"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    assert!(csv.contains(hash));
}

#[test]
fn every_mode_embeds_hash_and_format() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"grid": {"extents": [1.0], "cells": [16]}, "epsilon": 0.1, "epsilons": [0.2, 0.1], "trait_cells": 40, "t_end": 5.0, "dt": 0.5}"#,
    );
    for mode in ["steady", "evolve", "eigen-curve", "airy", "discrete"] {
        let out = dir.path().join(mode);
        let o = bin().arg(mode).arg("--config").arg(&cfg).arg("--out").arg(&out).output().unwrap();
        assert!(o.status.success(), "{mode}: {}", String::from_utf8_lossy(&o.stderr));
        for entry in std::fs::read_dir(&out).unwrap() {
            let path = entry.unwrap().path();
            let text = std::fs::read_to_string(&path).unwrap();
            if path.file_name().unwrap() == "checkpoint.json" {
                assert!(text.contains("dispersal-v1"));
                continue;
            }
            assert!(text.contains("format"), "{}", path.display());
            assert!(text.contains("config_sha256"), "{}", path.display());
        }
    }
}

#[test]
fn hostile_habitat_fails_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"habitat": {"preset": "cosine", "amplitude": 0.5}, "grid": {"extents": [1.0], "cells": [16]}, "trait_cells": 20, "epsilon": 5.0, "alpha_lo": 50.0, "alpha_hi": 60.0}"#);
    // Huge mutation and diffusion still admit a positive state for m with positive mean.
    let o = bin().arg("steady").arg("--config").arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = write_config(dir.path(), r#"{"habitat": {"preset": "samples", "values": [-1, -1, -1, -1, -1, -1, -1, -1, 0.5]}, "grid": {"extents": [1.0], "cells": [8]}}"#);
    let o = bin().arg("steady").arg("--config").arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}
