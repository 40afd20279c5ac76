use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_helmsort"))
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn sylvester_reference_angle() {
    let cfg = scenarios().join("reference_tech.json");
    let out = run(&["sylvester", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    let theta = v["theta"].as_f64().unwrap();
    assert!((theta - 0.1 / 0.275).abs() < 1e-12);
    assert_eq!(v["R"][1][0].as_f64().unwrap(), theta);
}

#[test]
fn sylvester_symmetric_and_invalid() {
    let dir = tempfile::tempdir().unwrap();
    let sym = write(dir.path(), "s.json", r#"{"sigma": [[2, 0.5], [0.5, 1]], "dsigma": [[1, 0.3], [0.3, 2]]}"#);
    let v = stdout_json(&run(&["sylvester", "--config", &sym]));
    assert_eq!(v["theta"].as_f64().unwrap(), 0.0);
    assert_eq!(v["W"][0][1].as_f64().unwrap(), 0.3);

    let bad = write(dir.path(), "b.json", r#"{"sigma": [[1, 2], [2, 1]], "dsigma": [[0, 1], [0, 0]]}"#);
    assert_eq!(run(&["sylvester", "--config", &bad]).status.code(), Some(2));
    let garbled = write(dir.path(), "g.json", "{not json");
    assert_eq!(run(&["sylvester", "--config", &garbled]).status.code(), Some(2));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["sylvester"]).status.code(), Some(1));
    assert_eq!(run(&["decompose", "--format", "xml"]).status.code(), Some(1));
    assert_eq!(run(&["validate", "--criterion", "13"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let header = rdr.headers().unwrap().iter().map(String::from).collect();
    let rows = rdr
        .records()
        .map(|r| r.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn decompose_writes_tables_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenarios().join("mixed.json");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = run(&["decompose", "--config", cfg.to_str().unwrap(), "--n", "33", "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read(a.join("fields.csv")).unwrap(), fs::read(b.join("fields.csv")).unwrap());
    assert_eq!(fs::read(a.join("diagnostics.json")).unwrap(), fs::read(b.join("diagnostics.json")).unwrap());
    let (header, rows) = csv_rows(&a.join("fields.csv"));
    assert_eq!(header, ["x1", "x2", "f", "A1", "A2", "v1", "v2", "r1", "r2", "wdot"]);
    assert!(rows.iter().all(|r| r.len() == 10));
    let diag: Value = serde_json::from_slice(&fs::read(a.join("diagnostics.json")).unwrap()).unwrap();
    for key in ["orthogonality", "divergence_residual", "max_boundary_flux", "curl_residual", "output_gain"] {
        assert!(diag[key].is_number(), "{key}");
    }
}

#[test]
fn decompose_symmetry_cases() {
    let dir = tempfile::tempdir().unwrap();
    let norm = |rows: &[Vec<f64>], c: [usize; 2]| -> f64 {
        rows.iter().map(|r| r[2] * (r[c[0]].powi(2) + r[c[1]].powi(2))).sum::<f64>().sqrt()
    };
    for (name, small, big) in [("symmetric", [7, 8], [3, 4]), ("antisymmetric", [5, 6], [3, 4])] {
        let out = dir.path().join(name);
        let cfg = scenarios().join(format!("{name}.json"));
        let o = run(&["decompose", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
        let (_, rows) = csv_rows(&out.join("fields.csv"));
        let ratio = norm(&rows, small) / norm(&rows, big);
        let limit = if name == "symmetric" { 1e-6 } else { 1e-2 };
        assert!(ratio < limit, "{name}: {ratio}");
    }
}

#[test]
fn decompose_json_format_and_penalized_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenarios().join("mixed.json");
    let o = run(&[
        "decompose", "--config", cfg.to_str().unwrap(), "--n", "17", "--solver", "penalized", "--psi", "1e5",
        "--format", "json", "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let rows: Value = serde_json::from_slice(&fs::read(dir.path().join("fields.json")).unwrap()).unwrap();
    assert!(rows.as_array().unwrap()[0]["wdot"].is_number());
    let diag: Value = serde_json::from_slice(&fs::read(dir.path().join("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag["psi"].as_f64(), Some(1e5));
}

#[test]
fn one_dimensional_scenario_has_no_reallocation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenarios().join("interval.json");
    let o = run(&["decompose", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let (_, rows) = csv_rows(&dir.path().join("fields.csv"));
    assert!(rows.iter().all(|r| r[7] == 0.0 && r[3] == r[5]));
}

#[test]
fn infer_reproduces_table_rows() {
    let dir = tempfile::tempdir().unwrap();
    let params = write(dir.path(), "p.json", r#"{"alpha": 0.239, "beta": 0.0, "delta": 0.036}"#);
    let records = scenarios().join("table1.csv");
    let o = run(&["infer", "--records", records.to_str().unwrap(), "--params", &params]);
    assert_eq!(o.status.code(), Some(0));
    let mut rdr = csv::Reader::from_reader(o.stdout.as_slice());
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    let f = |r: &csv::StringRecord, k: usize| -> f64 { r[k].parse().unwrap() };
    let (a, d) = (0.239, 0.036);
    assert!((f(&rows[0], 4).powi(2) * (a + d) - 1.0).abs() < 1e-14);
    assert!((f(&rows[1], 3).powi(2) * (a + d) - 2.0).abs() < 1e-14);
    assert!((f(&rows[2], 4).powi(2) * (a + 4.0 * d) - 1.0).abs() < 1e-14);
    assert!((f(&rows[2], 3).powi(2) * (a + 4.0 * d) - 4.0).abs() < 1e-14);

    let bad = write(dir.path(), "bad.csv", "occupation,earnings,q_ratio\na,1,1\nb,1,-3\n");
    let o = run(&["infer", "--records", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}

#[test]
fn counterfactual_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["counterfactual", "--n", "24", "--seed", "3", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = csv_rows(&dir.path().join("surface.csv"));
    assert_eq!(header, ["x1", "x2", "wdot", "pct_change", "zero_isocurve"]);
    assert!(rows.iter().all(|r| r[4] == 0.0 || r[4] == 1.0));
    let (_, fields) = csv_rows(&dir.path().join("fields.csv"));
    assert!(fields.iter().all(|r| r[3] == 0.0 && (r[4] - 0.1 * (r[0] + r[1])).abs() < 1e-12));
    let summary: Value = serde_json::from_slice(&fs::read(dir.path().join("counterfactual.json")).unwrap()).unwrap();
    assert_eq!(summary["counterclockwise"], Value::Bool(true));

    let zero = dir.path().join("zero");
    let o = run(&["counterfactual", "--n", "24", "--gamma-dot", "0", "--delta-dot", "0", "--out", zero.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let (_, fields) = csv_rows(&zero.join("fields.csv"));
    assert!(fields.iter().all(|r| r[3..9].iter().all(|v| *v == 0.0)));
}

#[test]
fn flow_trajectory_and_zero_rate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenarios().join("mixed.json");
    let o = run(&["flow", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--oracle-sample", "50"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = csv_rows(&dir.path().join("trajectory.csv"));
    assert_eq!(header, ["t", "T11", "T12", "T21", "T22", "W11", "W12", "W22", "defect"]);
    assert_eq!(rows.len(), 101);
    assert!(dir.path().join("oracle.json").exists());

    let still = write(
        dir.path(),
        "still.json",
        r#"{"grid": {"shape": "disk", "n": 17}, "density": {"type": "uniform"},
            "technology": {"type": "bilinear", "sigma": [[1, 0], [0, 1]], "dsigma": [[0, 0], [0, 0]]},
            "path": {"M0": [[2, 0.3], [0.3, 1]], "Mdot": [[0, 0], [0, 0]], "T": 1.0, "steps": 10}}"#,
    );
    let out = dir.path().join("still");
    let o = run(&["flow", "--config", &still, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let (_, rows) = csv_rows(&out.join("trajectory.csv"));
    assert!(rows.iter().all(|r| r[1..] == rows[0][1..]));

    let breaking = still.replace("still", "breaking");
    fs::write(&breaking, fs::read_to_string(&still).unwrap().replace(r#""Mdot": [[0, 0], [0, 0]], "T": 1.0"#, r#""Mdot": [[0, 0], [0, -3]], "T": 1.0"#)).unwrap();
    let o = run(&["flow", "--config", &breaking, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn assign_solves_small_instance() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write(
        dir.path(),
        "i.json",
        r#"{"workers": [[0],[1],[2]], "jobs": [[0],[1],[2]], "output": [[4,1,3],[2,0,5],[3,2,2]], "seed": null}"#,
    );
    let o = run(&["assign", "--config", &inst]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert_eq!(v["permutation"], serde_json::json!([0, 2, 1]));
    assert_eq!(v["total"].as_f64(), Some(11.0));
}

#[test]
fn validate_subset_and_calibrate() {
    let o = run(&["validate", "--criterion", "1,2,7"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 3);

    let o = run(&["calibrate", "--seed", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert!(v["objective"].as_f64().unwrap() >= 0.0);
    assert!(v["params"]["alpha"].as_f64().unwrap() > 0.0);
}
