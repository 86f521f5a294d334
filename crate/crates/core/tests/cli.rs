use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn demo(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("demos").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hybridopt"))
        .args(args)
        .env_remove("HYBRIDOPT_WORKERS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_exit_codes() {
    let ou = run(&["validate", "--model", s(&demo("ou.json"))]);
    assert_eq!(code(&ou), 0, "{}", String::from_utf8_lossy(&ou.stderr));
    let quad = run(&["validate", "--model", s(&demo("quadratic.json"))]);
    assert_eq!(code(&quad), 3);
    let report: serde_json::Value = serde_json::from_slice(&quad.stdout).unwrap();
    let h1 = report["checks"].as_array().unwrap().iter().find(|c| c["name"] == "H1").unwrap();
    assert!(h1["observed"].as_f64().unwrap() > 399.0);

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ \"state_dim\": 1, ").unwrap();
    assert_eq!(code(&run(&["validate", "--model", s(&bad)])), 2);
    assert_eq!(code(&run(&["validate", "--model", s(&dir.path().join("missing.json"))])), 2);
    assert_eq!(code(&run(&["validate"])), 2);
}

#[test]
fn simulate_is_reproducible_and_shows_switches() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for (out, workers) in [(&a, "1"), (&b, "4")] {
        let r = run(&[
            "simulate", "--model", s(&demo("two_state.json")), "--out", s(out),
            "--paths", "50", "--seed", "9", "--dt", "0.01", "--workers", workers,
        ]);
        assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    }
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());

    let mut reader = csv::Reader::from_reader(bytes.as_slice());
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["path", "t", "X_1", "regime", "mu", "nu"]);
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 50 * 101);
    let final_regimes: Vec<&str> = rows.iter().filter(|r| &r[1] == "1").map(|r| r.get(3).unwrap()).collect();
    assert!(final_regimes.contains(&"1") && final_regimes.contains(&"2"));
}

#[test]
fn constant_model_gives_constant_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p.csv");
    let r = run(&["simulate", "--model", s(&demo("frozen.json")), "--out", s(&out), "--paths", "3", "--dt", "0.1"]);
    assert_eq!(code(&r), 0);
    let mut reader = csv::Reader::from_path(&out).unwrap();
    for row in reader.records() {
        let row = row.unwrap();
        assert_eq!(&row[2], "0.25");
        assert_eq!(&row[3], "-0.5");
        assert_eq!(&row[4], "1");
    }
}

#[test]
fn simulate_json_and_bad_step() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p.json");
    let r = run(&[
        "simulate", "--model", s(&demo("ou.json")), "--out", s(&out), "--paths", "2",
        "--format", "json", "--control", s(&demo("trailing_max.json")),
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(v["paths"].as_array().unwrap().len(), 2);
    let r = run(&["simulate", "--model", s(&demo("two_state.json")), "--out", s(&out), "--dt", "0.5"]);
    assert_eq!(code(&r), 4);
}

#[test]
fn cost_of_switching_control() {
    let r = run(&[
        "cost", "--model", s(&demo("regime_cost.json")), "--control", s(&demo("nu_switch_on.json")),
        "--paths", "4000", "--seed", "3", "--dt", "0.01",
    ]);
    assert_eq!(code(&r), 0);
    let est: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    let mean = est["mean"].as_f64().unwrap();
    let se = est["stderr"].as_f64().unwrap();
    assert!((mean - (1.0 + (-1f64).exp())).abs() <= 3.0 * se + 0.02, "{mean} +- {se}");
    assert_eq!(est["paths"], 4000);
    assert_eq!(est["seed"], 3);
}

#[test]
fn solve_summaries_and_artifact_hash() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let args = |out: &Path| {
        run(&[
            "solve", "--model", s(&demo("regime_cost.json")), "--out", s(out),
            "--grid-nt", "10", "--grid-nx", "3", "--quad-order", "3",
        ])
    };
    let first = args(&a);
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&first.stdout).unwrap();
    assert!((summary["values"][0]["value"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert_eq!(code(&args(&b)), 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let artifact: serde_json::Value = serde_json::from_slice(&std::fs::read(&a).unwrap()).unwrap();
    assert_eq!(artifact["schema"], "hybridopt/value-grid");
    assert_eq!(artifact["config_hash"].as_str().unwrap().len(), 64);

    let frozen = run(&["solve", "--model", s(&demo("frozen.json")), "--out", s(&a), "--grid-nt", "4", "--grid-nx", "5"]);
    let summary: serde_json::Value = serde_json::from_slice(&frozen.stdout).unwrap();
    assert!((summary["values"][0]["value"].as_f64().unwrap() - 3.0).abs() < 1e-12);

    let huge = run(&[
        "solve", "--model", s(&demo("regime_cost.json")), "--out", s(&a),
        "--grid-nt", "10", "--grid-nx", "3", "--nu-atoms", "200", "--nu-levels", "5",
    ]);
    assert_eq!(code(&huge), 5);
}

#[test]
fn table_control_from_solved_grid() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.json");
    assert_eq!(
        code(&run(&[
            "solve", "--model", s(&demo("regime_cost.json")), "--out", s(&grid),
            "--grid-nt", "10", "--grid-nx", "3", "--quad-order", "3",
        ])),
        0
    );
    let control = dir.path().join("table.json");
    std::fs::write(&control, r#"{"kind":"table","grid":"grid.json"}"#).unwrap();
    let r = run(&[
        "cost", "--model", s(&demo("regime_cost.json")), "--control", s(&control),
        "--paths", "100", "--dt", "0.1",
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let est: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert!((est["mean"].as_f64().unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn verify_suite_and_tampering() {
    let suite = demo("verify_suite.json");
    let r = run(&["verify", "--config", s(&suite)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stdout));

    let r = run(&["verify", "--config", s(&suite), "--check", "moment-ou"]);
    assert_eq!(code(&r), 0);
    let report: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(report["checks"].as_array().unwrap().len(), 1);

    let dir = tempfile::tempdir().unwrap();
    let mut config: serde_json::Value = serde_json::from_slice(&std::fs::read(&suite).unwrap()).unwrap();
    for check in config["checks"].as_array_mut().unwrap() {
        let model = check["model"].as_str().unwrap().to_string();
        check["model"] = serde_json::Value::String(s(&demo(&model)).to_string());
        if check["name"] == "moment-ou" {
            check["tolerance"] = 0.0.into();
        }
    }
    let tampered = dir.path().join("tampered.json");
    std::fs::write(&tampered, serde_json::to_vec(&config).unwrap()).unwrap();
    assert_eq!(code(&run(&["verify", "--config", s(&tampered)])), 6);

    let empty = dir.path().join("empty.json");
    std::fs::write(&empty, r#"{"checks": []}"#).unwrap();
    let r = run(&["verify", "--config", s(&empty)]);
    assert_eq!(code(&r), 0);
    assert!(String::from_utf8_lossy(&r.stderr).contains("warning"));
}

#[test]
fn worker_flag_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p.csv");
    let r = Command::new(env!("CARGO_BIN_EXE_hybridopt"))
        .args(["simulate", "--model", s(&demo("ou.json")), "--out", s(&out), "--paths", "4"])
        .env("HYBRIDOPT_WORKERS", "2")
        .output()
        .unwrap();
    assert_eq!(code(&r), 0);
    let r = Command::new(env!("CARGO_BIN_EXE_hybridopt"))
        .args(["simulate", "--model", s(&demo("ou.json")), "--out", s(&out)])
        .env("HYBRIDOPT_WORKERS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&r), 2);
}
