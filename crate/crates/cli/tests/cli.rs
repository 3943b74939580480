use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn qttbs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qttbs")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn one_asset(cores: usize, out: &Path) -> Value {
    json!({
        "schema_version": 1,
        "market": {"spots": [65.0], "strike": 65.0, "rate": 0.08, "vols": [0.3], "correlation": [[1.0]], "maturity": 0.25},
        "grid": {"method": "timestepping", "cores": cores, "steps": 32,
                 "domain": {"kind": "strike_multiples", "lower": 1.0 / 3.0, "upper": 3.0}},
        "contract": {"kind": "basket_call", "exercise": "european", "call_method": "direct"},
        "reference": {"kind": "closed_form"},
        "query": {"spots": [[60.0], [70.0]]},
        "outputs": {"dir": out}
    })
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run(cmd: &str, cfg: &Path) -> Output {
    qttbs(&[cmd, "--config", cfg.to_str().unwrap()])
}

#[test]
fn price_then_query_then_greeks() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("out");
    let cfg = write(t.path(), "c.json", &one_asset(7, &out));

    let o = run("price", &cfg);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.starts_with("spots,price,clamped,reference,abs_error,rel_error"));
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary["grid_mean_abs_error"].as_f64().unwrap() < 1e-2);
    let first = &summary["points"][0];
    assert!(first["rel_error"].as_f64().unwrap() < 1e-2);
    let steps = std::fs::read_to_string(out.join("steps.csv")).unwrap();
    assert_eq!(steps.lines().count(), 33);

    let o = run("query", &cfg);
    assert!(o.status.success(), "{}", stderr(&o));
    let q = std::fs::read_to_string(out.join("query.csv")).unwrap();
    assert_eq!(q.lines().count(), 3);
    assert!(q.lines().nth(1).unwrap().starts_with("60,"));

    let o = run("greeks", &cfg);
    assert!(o.status.success(), "{}", stderr(&o));
    let g: Value = serde_json::from_str(&std::fs::read_to_string(out.join("greeks_summary.json")).unwrap()).unwrap();
    assert!(g["delta_mae"].as_f64().unwrap() < 1e-2);
    let grid = std::fs::read_to_string(out.join("greeks_grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 128);
    assert!(out.join("greeks_points.csv").exists());
}

#[test]
fn same_seed_gives_identical_prices() {
    let t = tempfile::tempdir().unwrap();
    let a = t.path().join("a");
    let b = t.path().join("b");
    let ca = write(t.path(), "a.json", &one_asset(6, &a));
    let cb = write(t.path(), "b.json", &one_asset(6, &b));
    assert!(qttbs(&["price", "--config", ca.to_str().unwrap(), "--seed", "7"]).status.success());
    assert!(qttbs(&["price", "--config", cb.to_str().unwrap(), "--seed", "7"]).status.success());
    let pa = std::fs::read_to_string(a.join("prices.csv")).unwrap();
    let pb = std::fs::read_to_string(b.join("prices.csv")).unwrap();
    assert_eq!(pa, pb);
}

#[test]
fn malformed_correlation_names_the_field() {
    let t = tempfile::tempdir().unwrap();
    let mut v = one_asset(5, &t.path().join("out"));
    v["market"] = json!({"reference_assets": 2, "strike": 21.0, "correlation": [[1.0, 1.5], [1.5, 1.0]]});
    v["contract"] = json!({"kind": "basket_put", "exercise": "european"});
    v["reference"] = Value::Null;
    let o = run("price", &write(t.path(), "c.json", &v));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("correlation"), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_with_one() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("out");

    let mut v = one_asset(5, &out);
    v["schema_version"] = json!(99);
    let o = run("price", &write(t.path(), "version.json", &v));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("schema_version"));

    let mut v = one_asset(5, &out);
    v["colour"] = json!("red");
    assert_eq!(run("price", &write(t.path(), "unknown.json", &v)).status.code(), Some(1));

    let mut v = one_asset(5, &out);
    v["grid"] = json!({"method": "spacetime", "cores": 5, "time_cores": 5, "domain": {"kind": "sigma", "width": 5.0}});
    v["contract"] = json!({"kind": "basket_put", "exercise": "american"});
    v["reference"] = Value::Null;
    let o = run("price", &write(t.path(), "american.json", &v));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("time-stepping"));

    let o = qttbs(&["price", "--config", t.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn query_needs_a_matching_cache() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("out");
    let cfg = write(t.path(), "c.json", &one_asset(5, &out));
    let o = run("query", &cfg);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("run `qttbs price` first"));

    assert!(run("price", &cfg).status.success());
    let other = write(t.path(), "d.json", &one_asset(6, &out));
    let o = run("greeks", &other);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("different"));
}

#[test]
fn out_of_domain_spot_is_listed_by_index() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("out");
    let mut v = one_asset(5, &out);
    let cfg = write(t.path(), "c.json", &v);
    assert!(run("price", &cfg).status.success());
    v["query"] = json!({"spots": [[65.0], [1000.0]]});
    let o = run("query", &write(t.path(), "q.json", &v));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("spot 0 (1000) lies outside the grid"), "{}", stderr(&o));
}

#[test]
fn empty_query_list_is_a_no_op() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("out");
    let mut v = one_asset(5, &out);
    assert!(run("price", &write(t.path(), "c.json", &v)).status.success());
    v["query"] = json!({"spots": []});
    let o = run("query", &write(t.path(), "q.json", &v));
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 1);
}

#[test]
fn unwritable_output_exits_with_two() {
    let t = tempfile::tempdir().unwrap();
    let blocker = t.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let cfg = write(t.path(), "c.json", &one_asset(5, &blocker.join("out")));
    assert_eq!(run("price", &cfg).status.code(), Some(2));
}

#[test]
fn smoke_bench_writes_verdict_columns() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("bench");
    let v = json!({"schema_version": 1, "bench": {"suite": "st-1d", "rows": [1, 2], "smoke": true}, "outputs": {"dir": out}});
    let cfg = write(t.path(), "b.json", &v);
    let o = qttbs(&["bench", "--config", cfg.to_str().unwrap(), "--parallel", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("bench_st-1d.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "suite,row,metric,value,paper,bound,verdict");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 6);
    assert!(rows[0].starts_with("st-1d,total_cores=6,mean_abs_error,"));
    assert!(rows[0].contains(",7.1e-3,"));
}

#[test]
fn unknown_suite_exits_with_one() {
    let t = tempfile::tempdir().unwrap();
    let v = json!({"schema_version": 1, "bench": {"suite": "table-9"}});
    let o = run("bench", &write(t.path(), "b.json", &v));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown suite"));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut n = 0;
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        qttbs::config::RunConfig::from_path(&p).unwrap_or_else(|e| panic!("{}: {}", p.display(), e));
        n += 1;
    }
    assert!(n >= 20);
}
