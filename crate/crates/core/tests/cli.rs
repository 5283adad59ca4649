use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_semiclass"))
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("semiclass-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&d);
    fs::create_dir_all(&d).unwrap();
    d
}

fn model(lambda: f64) -> Value {
    json!({
        "mass_large": 1.0, "mass_small": 1.0, "omega": 1.0, "lambda": lambda,
        "gamma": 0.5, "kt": 1.0, "hbar": 1.0, "sigma": 50.0, "eta": 0.5,
        "duration": 2.0, "dt": 0.01
    })
}

fn cat_config() -> Value {
    json!({
        "schema_version": 1,
        "model": model(1.0),
        "state": { "cat": { "q0": 6.0, "s": 0.5f64.sqrt(), "weights": [0.3, 0.7] } },
        "n_runs": 400,
        "seed": 7
    })
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn simulate_writes_reproducible_artifacts() {
    let dir = scratch("simulate");
    let cfg = write_config(&dir, "cat.json", &cat_config());
    let (a, b) = (dir.join("a"), dir.join("b"));
    for out in [&a, &b] {
        let o = run(&["simulate", "--config", s(&cfg), "--out", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["summary.json", "paths.csv", "runs.csv", "histograms.csv"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f} differs between reruns"
        );
    }
    let summary = read_json(&a.join("summary.json"));
    let fr = summary["branch_fractions"].as_array().unwrap();
    let se = summary["branch_std_errors"].as_array().unwrap();
    for (k, want) in [0.3, 0.7].into_iter().enumerate() {
        let f = fr[k].as_f64().unwrap();
        assert!((f - want).abs() < 5.0 * se[k].as_f64().unwrap(), "branch {k}: {f}");
    }

    let manifest = read_json(&a.join("manifest.json"));
    assert_eq!(manifest["master_seed"], 7);
    assert_eq!(manifest["run_seeds"].as_array().unwrap().len(), 400);
    assert_eq!(manifest["config_hash"], summary["config_hash"]);
    for f in manifest["files"].as_array().unwrap() {
        let bytes = fs::read(a.join(f["name"].as_str().unwrap())).unwrap();
        let hex: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(f["sha256"].as_str().unwrap(), hex);
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = scratch("threads");
    let cfg = write_config(&dir, "cat.json", &cat_config());
    let (a, b) = (dir.join("one"), dir.join("three"));
    assert!(
        run(&["simulate", "--config", s(&cfg), "--out", s(&a), "--threads", "1"])
            .status
            .success()
    );
    assert!(
        run(&["--threads", "3", "simulate", "--config", s(&cfg), "--out", s(&b)])
            .status
            .success()
    );
    assert_eq!(
        fs::read(a.join("summary.json")).unwrap(),
        fs::read(b.join("summary.json")).unwrap()
    );
    assert_eq!(
        fs::read(a.join("runs.csv")).unwrap(),
        fs::read(b.join("runs.csv")).unwrap()
    );
}

#[test]
fn overrides_change_seed_and_run_count() {
    let dir = scratch("overrides");
    let cfg = write_config(&dir, "cat.json", &cat_config());
    let out = dir.join("o");
    let o = run(&[
        "simulate",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--seed",
        "99",
        "--n-runs",
        "50",
    ]);
    assert!(o.status.success());
    let summary = read_json(&out.join("summary.json"));
    assert_eq!(summary["n_runs"], 50);
    assert_eq!(summary["master_seed"], 99);
}

#[test]
fn decoupled_meanfield_moves_freely() {
    let dir = scratch("meanfield");
    let cfg = write_config(
        &dir,
        "free.json",
        &json!({
            "schema_version": 1,
            "model": model(0.0),
            "state": { "coherent": { "q0": 1.0 } },
            "classical": { "q": 1.0, "p": 2.0 },
            "engine": "meanfield",
            "position_grid": { "min": -10.0, "max": 10.0, "n": 256 }
        }),
    );
    let out = dir.join("o");
    let o = run(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = read_json(&out.join("summary.json"));
    // Q(t) = Q0 + P0 t / M
    let q = summary["final_q"]["mean"].as_f64().unwrap();
    assert!((q - 5.0).abs() < 1e-10, "{q}");
}

#[test]
fn config_errors_exit_2_with_line() {
    let dir = scratch("badconfig");
    let bad = dir.join("bad.json");
    fs::write(
        &bad,
        "{\n  \"schema_version\": 1,\n  \"model\": {\"mass_large\": 1, \"mass_small\": 1, \"omega\": 1, \"lambda\": 1, \"gamma\": 0.5, \"kt\": 1, \"hbar\": 1, \"sigma\": 50, \"eta\": 0.5, \"duration\": 2, \"dt\": 0.01},\n  \"colour\": 3,\n  \"state\": {\"coherent\": {\"q0\": 0}}\n}\n",
    )
    .unwrap();
    let o = run(&["simulate", "--config", s(&bad), "--out", s(&dir.join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.json:4:"), "{err}");

    let mut v = cat_config();
    v["model"]["eta"] = json!(1.5);
    let cfg = write_config(&dir, "eta.json", &v);
    let o = run(&["simulate", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("eta"));

    let o = run(&["simulate", "--config", s(&dir.join("missing.json"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn wigner_reports_positivity() {
    let dir = scratch("wigner");
    let ground = write_config(
        &dir,
        "ground.json",
        &json!({ "schema_version": 1, "model": model(1.0), "state": { "coherent": { "q0": 0.0 } } }),
    );
    let out = dir.join("g");
    assert!(run(&["wigner", "--config", s(&ground), "--out", s(&out)])
        .status
        .success());
    let r = read_json(&out.join("summary.json"));
    assert!(r["raw_min"].as_f64().unwrap() >= -1e-10);
    assert!((r["raw_integral"].as_f64().unwrap() - 1.0).abs() < 1e-6);

    let cat = write_config(&dir, "cat.json", &cat_config());
    let out = dir.join("c");
    let o = run(&["wigner", "--config", s(&cat), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&out.join("summary.json"));
    assert!(r["raw_min"].as_f64().unwrap() < -0.05);
    assert!(r["sqrt_det_cov"].as_f64().unwrap() >= 0.5);
    assert!(r["smeared_min"].as_f64().unwrap() >= -1e-10);
    assert_eq!(r["smeared_positive"], true);
    let csv = fs::read_to_string(out.join("wigner.csv")).unwrap();
    assert!(csv.starts_with("q,p,raw,smeared\n"));
}

#[test]
fn compare_identical_configs_and_mismatched_grids() {
    let dir = scratch("compare");
    let a = write_config(&dir, "a.json", &cat_config());
    let out = dir.join("o");
    let o = run(&["compare", "--config", s(&a), "--config", s(&a), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&out.join("summary.json"));
    assert_eq!(r["divergence"].as_f64().unwrap(), 0.0);
    assert_eq!(r["fractions_agree"], true);

    let mut v = cat_config();
    v["model"]["dt"] = json!(0.02);
    let b = write_config(&dir, "b.json", &v);
    let o = run(&["compare", "--config", s(&a), "--config", s(&b), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));

    let o = run(&["compare", "--config", s(&a), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
}
