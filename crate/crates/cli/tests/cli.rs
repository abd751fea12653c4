use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("beamloop-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn beamloop(mode: &str, config: &Path, out: &Path, extra: &[&str]) -> i32 {
    let status = Command::new(env!("CARGO_BIN_EXE_beamloop"))
        .args([mode, "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap();
    status.status.code().unwrap()
}

fn summary(out: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap()
}

/// Default config shortened to keep the test quick.
fn short_default(dir: &Path) -> PathBuf {
    let text = fs::read_to_string(configs().join("default.toml")).unwrap().replace("t_end = 10.0", "t_end = 1.0");
    let path = dir.join("short.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn certify_linear_config_passes() {
    let out = scratch("linear");
    assert_eq!(beamloop("certify", &configs().join("linear.toml"), &out, &[]), 0);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("certification.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
    for c in report["components"].as_array().unwrap() {
        assert!(c["report"]["checks"].as_array().unwrap().iter().all(|k| k["passed"] == true));
    }
}

#[test]
fn certify_negative_damper_fails_with_witness() {
    let out = scratch("broken");
    assert_eq!(beamloop("certify", &configs().join("broken_damper.toml"), &out, &[]), 2);
    let s = summary(&out);
    assert_eq!(s["status"], "certification_failed");
    let failures = s["results"]["failures"].as_array().unwrap();
    let monotone = failures.iter().find(|f| f["check"] == "damper_monotone").unwrap();
    // d(s) = -s decreases everywhere, so any witness reproduces
    assert!(monotone["witness"][0].as_f64().unwrap().is_finite());
    assert_eq!(monotone["component"], "rotational.spring_damper");
}

#[test]
fn simulate_default_energy_is_monotone() {
    let dir = scratch("simulate");
    let config = short_default(&dir);
    let out = dir.join("out");
    assert_eq!(beamloop("simulate", &config, &out, &[]), 0);
    let csv = fs::read_to_string(out.join("energy.csv")).unwrap();
    let h: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(h.len() > 10);
    let eta = 1e-8 * h[0];
    assert!(h.windows(2).all(|w| w[1] <= w[0] + eta));
    assert!(h.last().unwrap() < &h[0]);
    let svg = fs::read_to_string(out.join("energy.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<polyline"));
}

#[test]
fn every_file_is_hashed_in_the_summary() {
    let dir = scratch("hashes");
    let config = short_default(&dir);
    let out = dir.join("out");
    assert_eq!(beamloop("simulate", &config, &out, &[]), 0);
    let files = summary(&out)["files"].as_array().unwrap().clone();
    let mut names: Vec<String> = files.iter().map(|f| f["name"].as_str().unwrap().to_string()).collect();
    names.sort();
    assert_eq!(names, ["certification.json", "energy.csv", "energy.svg", "trajectory.csv"]);
    for f in files {
        let bytes = fs::read(out.join(f["name"].as_str().unwrap())).unwrap();
        assert_eq!(f["bytes"].as_u64().unwrap() as usize, bytes.len());
        assert_eq!(f["sha256"].as_str().unwrap().len(), 64);
    }
}

#[test]
fn runs_are_byte_identical() {
    let dir = scratch("determinism");
    let config = short_default(&dir);
    let (a, b) = (dir.join("a"), dir.join("b"));
    assert_eq!(beamloop("simulate", &config, &a, &["--seed", "11"]), 0);
    assert_eq!(beamloop("simulate", &config, &b, &["--seed", "11"]), 0);
    for name in ["energy.csv", "trajectory.csv", "certification.json", "energy.svg"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let hashes = |d: &Path| summary(d)["files"].clone();
    assert_eq!(hashes(&a), hashes(&b));
}

#[test]
fn config_errors_exit_one() {
    let dir = scratch("config");
    let bad = dir.join("bad.toml");
    fs::write(&bad, "schema_version = 1\n[integrator]\ndt = -1.0\n").unwrap();
    assert_eq!(beamloop("simulate", &bad, &dir.join("out"), &[]), 1);
    fs::write(&bad, "schema_version = 1\nmode = \"skew\"\n").unwrap();
    assert_eq!(beamloop("spectrum", &bad, &dir.join("out"), &[]), 1);
    assert_eq!(beamloop("skew", &dir.join("missing.toml"), &dir.join("out"), &[]), 1);
}

#[test]
fn newton_failure_exits_three() {
    let dir = scratch("numerical");
    let cfg = dir.join("diverge.toml");
    // one Newton iteration cannot meet the tolerance on a nonlinear step
    fs::write(&cfg, "schema_version = 1\n[integrator]\nt_end = 0.01\nnewton_max_iter = 1\nnewton_tol = 1e-15\n").unwrap();
    let out = dir.join("out");
    assert_eq!(beamloop("simulate", &cfg, &out, &[]), 3);
    let s = summary(&out);
    assert_eq!(s["status"], "numerical_failure");
    assert_eq!(s["results"]["operation"], "simulate");
}

#[test]
fn analysis_modes_succeed() {
    let cfg = configs().join("default.toml");
    for mode in ["spectrum", "skew", "convergence"] {
        let out = scratch(mode);
        assert_eq!(beamloop(mode, &cfg, &out, &[]), 0, "{mode}");
    }
    let out = scratch("skew-check");
    beamloop("skew", &cfg, &out, &[]);
    assert!(summary(&out)["results"]["skew_defect"].as_f64().unwrap() < 1e-12);
    let out = scratch("spectrum-check");
    beamloop("spectrum", &cfg, &out, &[]);
    assert_eq!(summary(&out)["results"]["n_unstable"], 0);
}
