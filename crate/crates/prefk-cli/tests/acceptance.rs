//! CLI acceptance: schema round-trip, the exit-code contract, and
//! byte-identical seeded reproduction.

use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn prefk() -> Command {
    Command::new(env!("CARGO_BIN_EXE_prefk"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!(
        "prefk-accept-{tag}-{}",
        std::process::id()
    ));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("process exited")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn write(dir: &std::path::Path, name: &str, content: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, content).unwrap();
    path
}

fn report(criterion: &str, pass: bool) {
    println!(
        "[{}] acceptance {criterion}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "acceptance {criterion} failed");
}

// Criterion 8a: writing the default config and reading it back yields the
// identical effective configuration.
#[test]
fn criterion_8_config_round_trip() {
    let config = prefk::io::RunConfigFile::default();
    let dir = temp_dir("roundtrip");
    let path = write(&dir, "config.json", &config.to_json_pretty());
    let text = fs::read_to_string(&path).unwrap();
    let parsed = prefk::io::RunConfigFile::from_json(&text).unwrap();
    assert_eq!(config, parsed);

    // The written file also drives a run without complaint.
    let out_dir = dir.join("run");
    let out = prefk()
        .args(["train", "--config"])
        .arg(&path)
        .args(["--generator", "random", "--steps", "1", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    report("8: config schema round-trip", true);
}

// Criterion 8b: seeded runs reproduce byte-identical traces.
#[test]
fn criterion_8_traces_reproduce_exactly() {
    let dir = temp_dir("repro");
    let mut traces = Vec::new();
    for run in 0..2 {
        let out_dir = dir.join(format!("run{run}"));
        let out = prefk()
            .args([
                "train",
                "--generator",
                "separable_clusters",
                "--steps",
                "40",
                "--seed",
                "7",
                "--out",
            ])
            .arg(&out_dir)
            .output()
            .unwrap();
        assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        traces.push(fs::read(out_dir.join("trace.csv")).unwrap());
    }
    assert_eq!(traces[0], traces[1], "seeded traces differ");
    assert!(!traces[0].is_empty());

    // A different seed must change the trace.
    let out_dir = dir.join("run_other");
    let out = prefk()
        .args([
            "train",
            "--generator",
            "separable_clusters",
            "--steps",
            "40",
            "--seed",
            "8",
            "--out",
        ])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 0);
    let other = fs::read(out_dir.join("trace.csv")).unwrap();
    assert_ne!(traces[0], other);
    report("8: byte-identical seeded trace reproduction", true);
}

// Criterion 8c: exit-code table and line-numbered diagnostics.
#[test]
fn criterion_8_exit_codes_and_diagnostics() {
    let dir = temp_dir("codes");

    // Exit 2: malformed dataset line carries its line number.
    let bad = write(
        &dir,
        "bad.jsonl",
        "{\"x\":[0.0],\"y_pos\":[1.0],\"y_neg\":[2.0]}\nnot json at all\n",
    );
    let out = prefk().args(["select", "--data"]).arg(&bad).output().unwrap();
    assert_eq!(exit_code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 2"), "diagnostic lacks line number: {stderr}");

    // Exit 2: inconsistent embedding dimensions, also line-numbered.
    let mixed = write(
        &dir,
        "mixed.jsonl",
        "{\"x\":[0.0],\"y_pos\":[1.0],\"y_neg\":[2.0]}\n{\"x\":[0.0,1.0],\"y_pos\":[1.0,0.0],\"y_neg\":[2.0,0.0]}\n",
    );
    let out = prefk().args(["select", "--data"]).arg(&mixed).output().unwrap();
    assert_eq!(exit_code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    // Exit 2: unknown kernel tag in the config.
    let bad_config = write(
        &dir,
        "bad_config.json",
        r#"{"kernel": {"form": "single", "spec": {"type": "warp", "sigma": 1.0}}}"#,
    );
    let out = prefk()
        .args(["gradcheck", "--trials", "1", "--config"])
        .arg(&bad_config)
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 2);

    // Exit 2: zero trials.
    let out = prefk().args(["gradcheck", "--trials", "0"]).output().unwrap();
    assert_eq!(exit_code(&out), 2);

    // Exit 2: single-cluster analysis input (k >= 2 required).
    let single = write(
        &dir,
        "single.jsonl",
        "{\"point\":[0.0,0.0],\"label\":0}\n{\"point\":[1.0,0.0],\"label\":0}\n",
    );
    let out = prefk()
        .args(["analyze", "clusters", "--input"])
        .arg(&single)
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 2);

    // Exit 1: coincident centroids are an analysis failure, not bad input.
    let degenerate = write(
        &dir,
        "degenerate.jsonl",
        concat!(
            "{\"point\":[0.0,1.0],\"label\":0}\n",
            "{\"point\":[0.0,-1.0],\"label\":0}\n",
            "{\"point\":[1.0,0.0],\"label\":1}\n",
            "{\"point\":[-1.0,0.0],\"label\":1}\n",
        ),
    );
    let out = prefk()
        .args(["analyze", "clusters", "--input"])
        .arg(&degenerate)
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 1);
    report("8: exit-code table and line-numbered diagnostics", true);
}

// Criterion 8d: gradcheck passes at the documented tolerance with the
// default configuration and 100 trials per pair.
#[test]
fn criterion_8_gradcheck_passes() {
    let out = prefk()
        .args(["gradcheck", "--trials", "100", "--seed", "11"])
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let json = stdout_json(&out);
    assert_eq!(json["pass"], true);
    assert!(json["overall_worst_rel_err"].as_f64().unwrap() <= 1e-4);
    assert_eq!(json["pairs"].as_array().unwrap().len(), 42);
    report("8: gradcheck certification via the CLI", true);
}

// Criterion 8e: selection fixture with a high-variance, tight-triplet
// profile names the RBF kernel.
#[test]
fn criterion_8_select_names_rbf() {
    let dir = temp_dir("select");
    // Colinear triplets: d+ = 2, d- = 3 per record, so the alignment
    // variance is 1 (> 0.5) and the triplet tightness 0.2 (< 0.3).
    let mut lines = String::new();
    for _ in 0..4 {
        lines.push_str(
            "{\"x\":[0.0,0.0],\"y_pos\":[2.0,0.0],\"y_neg\":[3.0,0.0]}\n",
        );
    }
    let data = write(&dir, "rbf_profile.jsonl", &lines);
    let out = prefk().args(["select", "--data"]).arg(&data).output().unwrap();
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let json = stdout_json(&out);
    assert_eq!(json["kernel"]["recommended"], "rbf");
    assert_eq!(json["kernel"]["rule_fired"]["case"], 1);
    assert_eq!(json["records"], 4);
    assert_eq!(json["divergence"]["insufficient_data"],
        "policy_dist/ref_dist fields absent");

    // One record with full fields: the kurtosis sample has zero variance,
    // so the divergence section degrades instead of failing the run.
    let single = write(
        &dir,
        "single_full.jsonl",
        "{\"x\":[0.0],\"y_pos\":[2.0],\"y_neg\":[3.0],\"logp_pos\":-0.4,\"logp_neg\":-1.1,\"policy_dist\":[0.6,0.4],\"ref_dist\":[0.5,0.5]}\n",
    );
    let out = prefk().args(["select", "--data"]).arg(&single).output().unwrap();
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let json = stdout_json(&out);
    assert!(json["divergence"]["insufficient_data"]
        .as_str()
        .unwrap()
        .contains("kurtosis"));
    report("8: selection report on a constructed fixture", true);
}

// Criterion 8f: zero-step runs trace exactly the initial state; the HMK
// stability config does not collapse; the analysis fixtures reproduce the
// hand-computed values.
#[test]
fn criterion_8_run_and_analysis_fixtures() {
    let dir = temp_dir("fixtures");

    // Zero steps: exactly one data row.
    let out_dir = dir.join("zero");
    let out = prefk()
        .args([
            "train",
            "--generator",
            "separable_clusters",
            "--steps",
            "0",
            "--out",
        ])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 0);
    let trace = fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 2, "header plus one row");

    // The stability config keeps the mixture alive.
    let config = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs/hmk_stability.json");
    let out_dir = dir.join("hmk");
    let out = prefk()
        .args(["train", "--generator", "separable_clusters", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = stdout_json(&out);
    assert_eq!(summary["collapsed"], false);
    assert_eq!(summary["aborted"], serde_json::Value::Null);

    // Two-blob fixture reproduces the hand-computed separation score.
    let blobs = write(
        &dir,
        "blobs.jsonl",
        concat!(
            "{\"point\":[0.0,0.0],\"label\":0}\n",
            "{\"point\":[0.0,1.0],\"label\":0}\n",
            "{\"point\":[4.0,0.0],\"label\":1}\n",
            "{\"point\":[4.0,1.0],\"label\":1}\n",
        ),
    );
    let out = prefk()
        .args(["analyze", "clusters", "--input"])
        .arg(&blobs)
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 0);
    let json = stdout_json(&out);
    assert!((json["dbs"].as_f64().unwrap() - 0.25).abs() <= 1e-12);

    // Identity layers: top eigenvalue 1 per layer, weighted alpha 0.
    let layers = write(
        &dir,
        "layers.json",
        "[[[1.0,0.0,0.0],[0.0,1.0,0.0],[0.0,0.0,1.0]],[[1.0,0.0,0.0],[0.0,1.0,0.0],[0.0,0.0,1.0]]]",
    );
    let out = prefk()
        .args(["analyze", "htsr", "--input"])
        .arg(&layers)
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 0);
    let json = stdout_json(&out);
    assert!(json["weighted_alpha"].as_f64().unwrap().abs() <= 1e-12);
    report("8: run and analysis fixtures", true);
}

// Criterion 8i: a numerically diverging run exits 1 and still flushes the
// partial trace and an abort reason.
#[test]
fn criterion_8_aborted_run_flushes_partial_trace() {
    let dir = temp_dir("abort");
    let config = write(
        &dir,
        "blowup.json",
        r#"{
  "alpha": 0.0,
  "gamma": 0.0,
  "kernel": { "form": "single", "spec": { "type": "polynomial", "c": 1.0, "degree": 3 } },
  "eta": 100000000.0,
  "steps": 50,
  "seed": 0
}"#,
    );
    let out_dir = dir.join("run");
    let out = prefk()
        .args(["train", "--generator", "random", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 1);
    let summary = stdout_json(&out);
    assert!(summary["aborted"].is_string());
    let completed = summary["steps_completed"].as_u64().unwrap();
    assert!(completed < 50);
    let trace = fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count() as u64, completed + 2, "header plus rows");
    report("8: aborted run flushes its partial trace", true);
}

// Criterion 8h: training from a data bundle file works, and bundles with
// inconsistent tables are rejected as input errors.
#[test]
fn criterion_8_data_bundle() {
    let dir = temp_dir("bundle");
    let data = prefk::train::gen_synthetic(
        prefk::train::GeneratorKind::SeparableClusters,
        &prefk::train::GeneratorSizes {
            contexts: 2,
            outcomes: 4,
            embed_dim: 2,
            records: 6,
        },
        prefk::num::RandomSeed(3),
    )
    .unwrap();
    let bundle = write(&dir, "bundle.json", &serde_json::to_string(&data).unwrap());
    let out_dir = dir.join("run");
    let out = prefk()
        .args(["train", "--steps", "10", "--data"])
        .arg(&bundle)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    // Outcome table with the wrong row count must be rejected on parse.
    let broken = serde_json::to_string(&data)
        .unwrap()
        .replacen("[[0.0,0.0,0.0,0.0],[0.0,0.0,0.0,0.0]]", "[[0.0,0.0,0.0,0.0]]", 1);
    let bad = write(&dir, "broken.json", &broken);
    let out = prefk()
        .args(["train", "--steps", "1", "--data"])
        .arg(&bad)
        .arg("--out")
        .arg(dir.join("run2"))
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 2);
    report("8: data-bundle ingestion", true);
}

// Criterion 8g: PREFK_SEED overrides the config seed; an explicit flag
// overrides both.
#[test]
fn criterion_8_seed_precedence() {
    let dir = temp_dir("seed");
    let run = |tag: &str, env_seed: Option<&str>, flag_seed: Option<&str>| -> Vec<u8> {
        let out_dir = dir.join(tag);
        let mut cmd = prefk();
        cmd.args([
            "train",
            "--generator",
            "random",
            "--steps",
            "5",
            "--out",
        ])
        .arg(&out_dir);
        cmd.env_remove("PREFK_SEED");
        if let Some(s) = env_seed {
            cmd.env("PREFK_SEED", s);
        }
        if let Some(s) = flag_seed {
            cmd.args(["--seed", s]);
        }
        let out = cmd.output().unwrap();
        assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        fs::read(out_dir.join("trace.csv")).unwrap()
    };

    let default_run = run("default", None, None); // config seed 0
    let env_run = run("env", Some("99"), None);
    let env_run_again = run("env2", Some("99"), None);
    let flag_over_env = run("flag", Some("99"), Some("0"));

    assert_eq!(env_run, env_run_again);
    assert_ne!(default_run, env_run, "PREFK_SEED had no effect");
    assert_eq!(flag_over_env, default_run, "--seed did not override PREFK_SEED");

    // A malformed PREFK_SEED is a config error.
    let mut cmd = prefk();
    cmd.args(["train", "--generator", "random", "--steps", "1", "--out"])
        .arg(dir.join("badseed"))
        .env("PREFK_SEED", "not-a-number");
    let out = cmd.output().unwrap();
    assert_eq!(exit_code(&out), 2);
    report("8: seed precedence (flag > env > config)", true);
}
