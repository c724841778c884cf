use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use colordag::experiment::ExperimentSpec;
use colordag::fixtures::figure_one;
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_colordag"));
    c.env_remove("COLORDAG_OUT");
    c
}

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

#[test]
fn every_subcommand_has_help() {
    for sub in ["simulate", "check", "reward", "ledger", "params", "experiment"] {
        let o = bin().args([sub, "--help"]).output().unwrap();
        assert_eq!(code(&o), 0, "{sub}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("Usage:"), "{sub}");
    }
    for sub in ["check", "solve"] {
        let o = bin().args(["params", sub, "--help"]).output().unwrap();
        assert_eq!(code(&o), 0, "params {sub}");
    }
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&bin().output().unwrap()), 2);
    assert_eq!(code(&bin().args(["simulate", "--seeds", "3..1"]).output().unwrap()), 2);
    assert_eq!(
        code(
            &bin()
                .args(["reward", "--dag", "/nonexistent", "--nl", "2"])
                .output()
                .unwrap()
        ),
        2
    );
    // --extended needs --nl
    assert_eq!(
        code(
            &bin()
                .args(["ledger", "--dag", "x", "--color", "0", "--extended"])
                .output()
                .unwrap()
        ),
        2
    );
}

#[test]
fn params_check_reports_each_constraint() {
    let args = [
        "params",
        "check",
        "--alpha",
        "0.25",
        "--epsilon",
        "1e-7",
        "--delta-net",
        "5",
        "--nc",
        "10",
        "--deltac",
        "0.04",
    ];
    let o = bin().args(args).args(["--nl", "7226"]).output().unwrap();
    assert_eq!(code(&o), 0);
    let v = stdout_json(&o);
    assert_eq!(v["verdict"]["pass"], true);
    assert_eq!(v["tuple"]["t_max"], 7226u64 * 7226);

    let o = bin().args(args).args(["--nl", "7225"]).output().unwrap();
    assert_eq!(code(&o), 1);
    let v = stdout_json(&o);
    assert_eq!(v["verdict"]["minority"]["pass"], false);
    assert_eq!(v["verdict"]["forking"]["pass"], true);
}

#[test]
fn params_solve() {
    let o = bin()
        .args([
            "params",
            "solve",
            "--alpha",
            "0.25",
            "--epsilon",
            "1e-7",
            "--delta-net",
            "5",
            "--nc",
            "10",
            "--deltac",
            "0.04",
        ])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(stdout_json(&o)["n_ell"], 7226);

    // Two colors and five rounds of delay leave no room for the forking gap.
    let o = bin()
        .args([
            "params",
            "solve",
            "--alpha",
            "0.25",
            "--epsilon",
            "1e-7",
            "--delta-net",
            "5",
            "--nc",
            "2",
            "--deltac-factor",
            "0.4",
        ])
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("no solution"));
}

#[test]
fn reward_and_ledger_on_the_example_dag() {
    let f = figure_one();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dag.jsonl");
    fs::write(&path, f.dag.to_jsonl()).unwrap();
    let p = path.to_str().unwrap();

    let ids = |v: &Value| -> Vec<String> {
        v.as_array()
            .unwrap()
            .iter()
            .map(|x| f.name(serde_json::from_value(x.clone()).unwrap()).to_string())
            .collect()
    };
    let o = bin().args(["ledger", "--dag", p, "--color", "2"]).output().unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(ids(&stdout_json(&o)), ["Y1", "Y2", "Y3"]);
    let o = bin()
        .args(["ledger", "--dag", p, "--color", "0", "--extended", "--nl", "2"])
        .output()
        .unwrap();
    assert_eq!(ids(&stdout_json(&o)), ["B1", "Y1", "B2", "R1", "B3"]);

    let o = bin().args(["reward", "--dag", p, "--nl", "2"]).output().unwrap();
    assert_eq!(code(&o), 0);
    let reports: Vec<Value> = String::from_utf8(o.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(reports.len(), 9);
    for r in &reports {
        assert_eq!(r["reward"].as_u64().unwrap() == 1, r["acceptable"].as_bool().unwrap());
    }
}

#[test]
fn simulate_then_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    let cfg = repo().join("configs/scheduler.json");
    let o = bin()
        .args([
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--seeds",
            "3..5",
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut files: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    files.sort();
    assert_eq!(files, ["seed-3.jsonl", "seed-4.jsonl"]);

    let params = repo().join("configs/params.json");
    let o = bin()
        .args([
            "check",
            "--history",
            out.join("seed-3.jsonl").to_str().unwrap(),
            "--params",
            params.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    let v = stdout_json(&o);
    let safe = v["safety"]["pass"].as_bool().unwrap();
    let desiderata = ["consistency", "growth", "quality", "revenue"]
        .iter()
        .all(|k| v["desiderata"][k]["count"].as_u64() == Some(0));
    assert_eq!(code(&o), if safe && desiderata { 0 } else { 1 });
    assert_eq!(v["safety"]["colors"].as_array().unwrap().len(), 10);
}

#[test]
fn experiment_writes_to_the_env_directory() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(repo().join("configs/honest-baseline.json"))
        .unwrap()
        .replace(r#""seeds": "0..10""#, r#""seeds": "0..2""#);
    let cfg = dir.path().join("spec.json");
    fs::write(&cfg, text).unwrap();
    let out = dir.path().join("env-out");
    let o = bin()
        .args(["experiment", "--config", cfg.to_str().unwrap()])
        .env("COLORDAG_OUT", &out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = String::from_utf8(o.stdout).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 5);
    assert_eq!(fs::read_to_string(out.join("utilities.csv")).unwrap(), csv);
    assert!(out.join("histories/seed-1.jsonl").exists());
}

#[test]
fn experiment_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let base = fs::read_to_string(repo().join("configs/honest-baseline.json"))
        .unwrap()
        .replace(r#""seeds": "0..10""#, r#""seeds": "0..2""#);
    let run = |text: String| {
        let cfg = dir.path().join("spec.json");
        fs::write(&cfg, text).unwrap();
        bin()
            .args(["experiment", "--config", cfg.to_str().unwrap(), "--out"])
            .arg(dir.path().join("out"))
            .output()
            .unwrap()
    };
    let o = run(base.replace(r#""delta": 5,"#, r#""delta": 0,"#));
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("config.delta"));

    let o = run(base.replace(r#""outputs""#, r#""assertions": {"min_safe_fraction": 1.0}, "outputs""#));
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("safe fraction"));
}

#[test]
fn shipped_configs_match_the_schemas() {
    let schema: Value =
        serde_json::from_str(&fs::read_to_string(repo().join("schemas/experiment.schema.json")).unwrap()).unwrap();
    let props = schema["properties"].as_object().unwrap();
    for name in ["honest-baseline.json", "self-forker.json"] {
        let spec = ExperimentSpec::from_json(&fs::read_to_string(repo().join("configs").join(name)).unwrap())
            .unwrap_or_else(|e| panic!("{name}: {e}"));
        // Every serialized field is documented, and nested sections too.
        let v = serde_json::to_value(&spec).unwrap();
        for (k, inner) in v.as_object().unwrap() {
            assert!(props.contains_key(k), "{k} missing from the schema");
            if let (Some(obj), Some(doc)) = (inner.as_object(), props[k]["properties"].as_object()) {
                for kk in obj.keys() {
                    assert!(doc.contains_key(kk), "{k}.{kk} missing from the schema");
                }
            }
        }
    }
    for name in ["scheduler-config", "params", "strategies"] {
        let _: Value =
            serde_json::from_str(&fs::read_to_string(repo().join(format!("schemas/{name}.schema.json"))).unwrap())
                .unwrap();
    }
}
