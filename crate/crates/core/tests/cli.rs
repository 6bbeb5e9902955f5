//! End-to-end checks of the `kgflow` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn kgflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgflow"))
        .args(args)
        .env("KGFLOW_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn small_evolve(out: &Path, extra: &[&str]) -> Output {
    let out = out.to_str().unwrap();
    let mut args = vec![
        "run", "--out", out,
        "--override", "grid.dim=2",
        "--override", "grid.n=16",
        "--override", "grid.length=10",
        "--override", "solve.T=1",
        "--override", "evolve.energy_tol=1e-4",
    ];
    for e in extra {
        args.push("--override");
        args.push(e);
    }
    kgflow(&args)
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn version_subcommand() {
    let o = kgflow(&["version"]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "kgflow 0.1.0");
}

#[test]
fn zero_data_gives_an_all_zero_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = small_evolve(dir.path(), &["data.amplitude=0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("diagnostics.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("time,energy,"));
    let mut rows = 0;
    for line in lines {
        rows += 1;
        for v in line.split(',').skip(1) {
            assert_eq!(v.parse::<f64>().unwrap(), 0.0, "{line}");
        }
    }
    assert!(rows > 2);
    let s = read_json(&dir.path().join("summary.json"));
    assert_eq!(s["pass"], Value::Bool(true));
    assert_eq!(s["scenario"], "evolve");
}

#[test]
fn bad_config_exits_two_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    for (bad, path) in [("grid.nn=3", "grid.nn"), ("solve.dt=\"abc\"", "solve.dt"), ("data.width=-1", "data.width")] {
        let o = small_evolve(dir.path(), &[bad]);
        assert_eq!(o.status.code(), Some(2), "{bad}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(path), "{bad}: {err}");
    }
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "scenario = \"no_such_thing\"\n").unwrap();
    let o = kgflow(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("scenario"));
}

#[test]
fn report_merges_runs_and_flags_drift() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert!(small_evolve(&root.join("a"), &["data.amplitude=0.3"]).status.success());

    let o = kgflow(&["report", root.to_str().unwrap()]);
    assert!(o.status.success());
    let rep = read_json(&root.join("report.json"));
    assert_eq!(rep["runs"].as_array().unwrap().len(), 1);
    assert_eq!(rep["drift_flagged"], Value::Bool(false));

    assert!(small_evolve(&root.join("b"), &["data.amplitude=0.3"]).status.success());
    let o = kgflow(&["report", root.to_str().unwrap()]);
    assert!(o.status.success());
    let rep = read_json(&root.join("report.json"));
    assert_eq!(rep["runs"].as_array().unwrap().len(), 2);
    assert_eq!(rep["distinct_config_hashes"], 1);
    for run in rep["runs"].as_array().unwrap() {
        for (_, d) in run["drift"].as_object().unwrap() {
            assert_eq!(d["relative"].as_f64(), Some(0.0));
        }
    }
    assert_eq!(
        fs::read(root.join("a/diagnostics.csv")).unwrap(),
        fs::read(root.join("b/diagnostics.csv")).unwrap()
    );

    // A doubled constant is flagged.
    let sb = root.join("b/summary.json");
    let mut v = read_json(&sb);
    let c = v["constants"]["energy_drift"].as_f64().unwrap();
    v["constants"]["energy_drift"] = (2.0 * c + 1e-300).into();
    fs::write(&sb, serde_json::to_string(&v).unwrap()).unwrap();
    let o = kgflow(&["report", root.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(read_json(&root.join("report.json"))["drift_flagged"], Value::Bool(true));

    // A corrupt summary is listed, not fatal.
    fs::create_dir_all(root.join("c")).unwrap();
    fs::write(root.join("c/summary.json"), "{ not json").unwrap();
    fs::write(&sb, fs::read(root.join("a/summary.json")).unwrap()).unwrap();
    let o = kgflow(&["report", root.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rep = read_json(&root.join("report.json"));
    let problems = rep["problems"].as_array().unwrap();
    assert_eq!(problems.len(), 1);
    assert!(problems[0]["path"].as_str().unwrap().ends_with("c/summary.json"));
}

#[test]
fn report_on_an_empty_directory_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = kgflow(&["report", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn checkpoint_resume_reproduces_the_tail() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let full = root.join("full");
    assert!(small_evolve(&full, &["solve.T=2", "evolve.checkpoint_every=1", "data.amplitude=0.5"]).status.success());
    let stem = full.join("checkpoints/ckpt_0000");
    let part = root.join("part");
    let resume = format!("evolve.resume=\"{}\"", stem.display());
    let o = small_evolve(&part, &["solve.T=1", &resume, "data.amplitude=0.5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        fs::read(full.join("checkpoints/final.kgf")).unwrap(),
        fs::read(part.join("checkpoints/final.kgf")).unwrap()
    );
    let strip = |p: &Path| -> Vec<String> {
        fs::read_to_string(p)
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    let a = strip(&full.join("diagnostics.csv"));
    let b = strip(&part.join("diagnostics.csv"));
    assert_eq!(a[0], b[0]);
    assert!(a.ends_with(&b[1..]), "resumed rows differ from the tail of the full run");
}
