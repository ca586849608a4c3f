use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lcprf"));
    c.env("RUST_LOG", "warn");
    c
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

/// Writes `body` as a config file with `output` pointing into the same directory.
fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let out = dir.join(format!("{name}_out"));
    let mut v: Value = serde_json::from_str(body).unwrap();
    v["output"] = Value::String(out.to_string_lossy().into_owned());
    let path = dir.join(format!("{name}.json"));
    fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path
}

fn sim(method: &str) -> String {
    format!(
        r#"{{"data": {{"generator": "sim", "n": 400}}, "method": "{method}", "alpha": 0.1, "seed": 11,
            "base": {{"n_trees": 20}}, "localizer": {{"n_trees": 20}}, "oracle_draws": 10000}}"#
    )
}

fn column(path: &Path, name: &str) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let i = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|rec| rec.unwrap()[i].to_string()).collect()
}

fn ok(o: &Output) {
    assert_eq!(code(o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad_alpha = write_config(dir.path(), "a", &sim("lcp-rf").replace("0.1", "1.5"));
    let o = run(&["run", bad_alpha.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("alpha"));

    let no_clustering = write_config(dir.path(), "b", &sim("lcp-rf-g"));
    assert_eq!(code(&run(&["run", no_clustering.to_str().unwrap()])), 2);

    let unknown = write_config(dir.path(), "c", &sim("lcp-qq"));
    assert_eq!(code(&run(&["run", unknown.to_str().unwrap()])), 2);

    let missing_file = dir.path().join("nope.json");
    assert_eq!(code(&run(&["run", missing_file.to_str().unwrap()])), 2);
}

#[test]
fn bad_data_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!(
        r#"{{"data": {{"csv": "{}", "target": "y"}}, "method": "split", "alpha": 0.2}}"#,
        fixture("bad_cell.csv").display()
    );
    let cfg = write_config(dir.path(), "nan", &body);
    let o = run(&["run", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("row 4"));

    let body = body.replace("bad_cell", "no_target");
    let cfg = write_config(dir.path(), "missing", &body);
    assert_eq!(code(&run(&["run", cfg.to_str().unwrap()])), 3);
}

#[test]
fn fit_then_predict_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    for method in ["lcp-rf", "qrf-tc"] {
        let cfg = write_config(dir.path(), method, &sim(method));
        let out = dir.path().join(format!("{method}_out"));
        ok(&run(&["run", cfg.to_str().unwrap()]));
        let run_lower = column(&out.join("points.csv"), "lower");
        let run_upper = column(&out.join("points.csv"), "upper");

        ok(&run(&["fit", "--config", cfg.to_str().unwrap()]));
        let pred = out.join("pred.csv");
        let (model, data) = (out.join("model.json"), out.join("test_split.csv"));
        ok(&run(&["predict", model.to_str().unwrap(), data.to_str().unwrap(), pred.to_str().unwrap()]));
        assert_eq!(column(&pred, "lower"), run_lower, "{method}");
        assert_eq!(column(&pred, "upper"), run_upper, "{method}");
    }
}

#[test]
fn corrupted_model_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "m", &sim("lcp-rf"));
    let out = dir.path().join("m_out");
    ok(&run(&["fit", cfg.to_str().unwrap()]));
    let model = out.join("model.json");
    let data = out.join("test_split.csv");
    let pred = out.join("pred.csv");

    let text = fs::read_to_string(&model).unwrap();
    let broken = dir.path().join("broken.json");
    fs::write(&broken, &text[..text.len() / 2]).unwrap();
    let o = run(&[
        "predict",
        "--model",
        broken.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        pred.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3);

    let mut v: Value = serde_json::from_str(&text).unwrap();
    v["version"] = Value::from(99);
    fs::write(&broken, v.to_string()).unwrap();
    assert_eq!(code(&run(&["predict", broken.to_str().unwrap(), data.to_str().unwrap(), pred.to_str().unwrap()])), 3);
}

#[test]
fn missing_feature_column_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "m", &sim("split"));
    let out = dir.path().join("m_out");
    ok(&run(&["fit", cfg.to_str().unwrap()]));
    let o = run(&[
        "predict",
        out.join("model.json").to_str().unwrap(),
        fixture("mini.csv").to_str().unwrap(),
        out.join("pred.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("x0"));
}

#[test]
fn single_method_compare_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c", &sim("lcp-rf"));
    let out = dir.path().join("c_out");
    ok(&run(&["run", cfg.to_str().unwrap()]));
    let run_points = fs::read_to_string(out.join("points.csv")).unwrap();
    ok(&run(&["compare", cfg.to_str().unwrap()]));
    assert_eq!(fs::read_to_string(out.join("points_lcp-rf.csv")).unwrap(), run_points);
    assert_eq!(column(&out.join("compare.csv"), "method"), ["lcp-rf"]);
}

#[test]
fn one_component_groupwise_matches_global() {
    let dir = tempfile::tempdir().unwrap();
    let body = sim("lcp-rf-g").replace(
        r#""localizer": {"n_trees": 20}"#,
        r#""localizer": {"n_trees": 20, "min_leaf_size": 40}, "clustering": {"kind": "components"}"#,
    );
    let cfg = write_config(dir.path(), "g", &body);
    ok(&run(&["run", cfg.to_str().unwrap()]));
    let out = dir.path().join("g_out");
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["n_groups"], 1);
    let grouped = column(&out.join("points.csv"), "radius");

    let cfg = write_config(dir.path(), "g", &body.replace("lcp-rf-g", "lcp-rf"));
    ok(&run(&["run", cfg.to_str().unwrap()]));
    assert_eq!(column(&out.join("points.csv"), "radius"), grouped);
}

#[test]
fn csv_runs_with_and_without_external_columns() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!(
        r#"{{"data": {{"csv": "{}", "target": "y"}}, "methods": ["split", "lcp-rf"], "alpha": 0.2,
            "base": {{"n_trees": 10, "min_leaf_size": 5}}, "localizer": {{"n_trees": 10, "min_leaf_size": 5}}}}"#,
        fixture("mini.csv").display()
    );
    let cfg = write_config(dir.path(), "plain", &body);
    ok(&run(&["compare", cfg.to_str().unwrap()]));
    assert_eq!(column(&dir.path().join("plain_out/compare.csv"), "method"), ["split", "lcp-rf"]);

    let body = body
        .replace("mini.csv", "external.csv")
        .replace(r#""target": "y""#, r#""target": "y", "external": {"mean": "mu"}"#)
        .replace(r#""methods": ["split", "lcp-rf"]"#, r#""method": "lcp-rf""#);
    let cfg = write_config(dir.path(), "ext", &body);
    ok(&run(&["run", cfg.to_str().unwrap()]));
    let out = dir.path().join("ext_out");
    // The external mean is never used as a feature.
    let header = fs::read_to_string(out.join("test_split.csv")).unwrap();
    assert!(!header.lines().next().unwrap().contains("mu"));
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!(report["coverage"].as_f64().unwrap() > 0.0);
}

#[test]
fn infinite_threshold_survives_the_model_file() {
    let dir = tempfile::tempdir().unwrap();
    // 32 calibration rows cannot certify 99% coverage.
    let body = format!(
        r#"{{"data": {{"csv": "{}", "target": "y"}}, "method": "split", "alpha": 0.01, "base": {{"n_trees": 10}}}}"#,
        fixture("mini.csv").display()
    );
    let cfg = write_config(dir.path(), "inf", &body);
    let out = dir.path().join("inf_out");
    ok(&run(&["fit", cfg.to_str().unwrap()]));
    let pred = out.join("pred.csv");
    let (model, data) = (out.join("model.json"), out.join("test_split.csv"));
    ok(&run(&["predict", model.to_str().unwrap(), data.to_str().unwrap(), pred.to_str().unwrap()]));
    assert!(column(&pred, "radius").iter().all(|r| r == "inf"));
}
