use std::path::Path;
use std::process::{Command, Output};

use fair_curtail::envelope::check_envelope;
use fair_curtail::grid::{builtin_testbed, Snapshot};
use fair_curtail::simulator::{generate_duck_curve, read_trace_csv};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fair-curtail"))
        .args(args)
        .arg("--output-dir")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn records(path: &Path) -> (csv::StringRecord, Vec<csv::StringRecord>) {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let header = rdr.headers().unwrap().clone();
    (header, rdr.records().map(Result::unwrap).collect())
}

const SNAPSHOT: [&str; 4] = ["--demand", "1,2,1,2,1", "--potential", "5,5,5,5,5"];

#[test]
fn solve_writes_a_feasible_envelope() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["solve", "--network", "testbed", "--scheme", "opf_export"];
    args.extend(SNAPSHOT);
    let out = run(dir.path(), &args);
    assert!(out.status.success(), "{}", stderr(&out));

    let (header, rows) = records(&dir.path().join("solve.csv"));
    assert_eq!(&header[1], "lambda");
    assert_eq!(rows.len(), 1);
    let lambda: f64 = rows[0][1].parse().unwrap();
    assert!(lambda > 0.0 && lambda < 1.0);
    let x: Vec<f64> = (3..8).map(|k| rows[0][k].parse().unwrap()).collect();
    let snap = Snapshot::new(vec![1.0, 2.0, 1.0, 2.0, 1.0], vec![5.0; 5]).unwrap();
    assert!(check_envelope(&builtin_testbed(), &snap, &x).unwrap().feasible);
}

#[test]
fn solve_json_mirrors_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["solve", "--network", "testbed", "--scheme", "nash_export", "--format", "json"];
    args.extend(SNAPSHOT);
    let out = run(dir.path(), &args);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(dir.path().join("solve.json")).unwrap();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    let record = &value[0];
    assert_eq!(record["scheme"], "nash_export");
    assert!(record["lambda"].is_null());
    assert_eq!(record["x"].as_array().unwrap().len(), 5);
    assert_eq!(record["v_bus"].as_array().unwrap().len(), 6);
    assert_eq!(record["feasible"], true);
}

#[test]
fn missing_scheme_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["solve", "--network", "testbed"];
    args.extend(SNAPSHOT);
    let out = run(dir.path(), &args);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--scheme"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["solve", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn infeasible_fallback_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "solve", "--network", "testbed", "--scheme", "egalitarian", "--c-ref", "0.01", "--demand", "1,2,1,2,1",
        "--potential", "9,9,9,9,9",
    ];
    let out = run(dir.path(), &args);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("FallbackInfeasible"));
}

#[test]
fn wrong_snapshot_length_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["solve", "--network", "testbed", "--scheme", "opf_export", "--demand", "1,2", "--potential", "3,3"];
    let out = run(dir.path(), &args);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("DimensionMismatch"));
}

#[test]
fn missing_network_file_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["solve", "--network", "/nonexistent/feeder.toml", "--scheme", "opf_export"];
    args.extend(SNAPSHOT);
    let out = run(dir.path(), &args);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn compare_emits_thirty_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["compare", "--network", "testbed", "--generate", "42", "--at", "12:00"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let (header, rows) = records(&dir.path().join("compare.csv"));
    assert_eq!(header.iter().collect::<Vec<_>>(), ["scheme", "prosumer", "x", "p_bar", "d", "export", "status"]);
    assert_eq!(rows.len(), 30);

    let column = |scheme: &str, f: &dyn Fn(&csv::StringRecord) -> f64| -> Vec<f64> {
        rows.iter().filter(|r| &r[0] == scheme).map(f).collect()
    };
    let spread = |v: &[f64]| v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min);
    let num = |r: &csv::StringRecord, k: usize| r[k].parse::<f64>().unwrap();
    let exports = column("uniform_dynamic_export", &|r| num(r, 5));
    assert!(spread(&exports) <= 1e-2, "{exports:?}");
    let curtailed = column("egalitarian", &|r| num(r, 3) - num(r, 2));
    assert!(spread(&curtailed) <= 1e-2, "{curtailed:?}");

    let net = builtin_testbed();
    let snap = generate_duck_curve(&net, 42).snapshots()[48].clone();
    for scheme in ["opf_generation", "opf_export", "uniform_dynamic_export", "egalitarian", "utilitarian_mix", "nash_export"] {
        let x = column(scheme, &|r| num(r, 2));
        assert!(check_envelope(&net, &snap, &x).unwrap().feasible, "{scheme}");
    }
}

#[test]
fn compare_records_a_failing_panel() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        "network = \"testbed\"\ngenerate = 42\n\n[[schemes]]\nscheme = \"opf_export\"\n\n[[schemes]]\nscheme = \"egalitarian\"\nc_ref = 0.01\n",
    )
    .unwrap();
    let out = run(dir.path(), &["compare", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let (_, rows) = records(&dir.path().join("compare.csv"));
    assert_eq!(rows.len(), 10);
    assert!(rows[..5].iter().all(|r| &r[6] == "ok"));
    assert!(rows[5..].iter().all(|r| &r[6] == "ERR:FallbackInfeasible"));
}

#[test]
fn simulate_day_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["--jobs", "2", "simulate", "--network", "testbed", "--generate", "0", "--scheme", "opf_export"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("min lambda") && stdout.contains("peak voltage") && stdout.contains("kWh"));

    let file = std::fs::File::open(dir.path().join("trace.csv")).unwrap();
    let rows = read_trace_csv(file).unwrap();
    assert_eq!(rows.len(), 96);
    let net = builtin_testbed();
    let scenario = generate_duck_curve(&net, 0);
    for (row, snap) in rows.iter().zip(scenario.snapshots()) {
        assert_eq!(Some(row.t.as_str()), snap.timestamp());
        let vmax = row.v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(vmax <= 1.05 + 1e-6, "{}: {vmax}", row.t);
        assert!(check_envelope(&net, snap, &row.x).unwrap().feasible, "{}", row.t);
    }
}

#[test]
fn simulate_rejects_two_sources() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("s.csv");
    std::fs::write(&scenario, "t,demand_1\n").unwrap();
    let out = run(
        dir.path(),
        &["simulate", "--network", "testbed", "--generate", "0", "--scenario", scenario.to_str().unwrap(), "--scheme", "opf_export"],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn generated_scenario_feeds_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["gen-scenario", "--network", "testbed", "--seed", "5"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let first = std::fs::read(dir.path().join("scenario.csv")).unwrap();
    let again = run(dir.path(), &["gen-scenario", "--network", "testbed", "--seed", "5"]);
    assert!(again.status.success());
    assert_eq!(first, std::fs::read(dir.path().join("scenario.csv")).unwrap());

    let path = dir.path().join("scenario.csv");
    let out = run(
        dir.path(),
        &["simulate", "--network", "testbed", "--scenario", path.to_str().unwrap(), "--scheme", "uniform_dynamic_export", "--k", "2"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = read_trace_csv(std::fs::File::open(dir.path().join("trace.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 96);
    assert!(rows.iter().all(|r| r.scheme == "uniform_dynamic_export"));
}

#[test]
fn help_and_version_exit_zero() {
    for flag in ["--help", "--version"] {
        let out = Command::new(env!("CARGO_BIN_EXE_fair-curtail")).arg(flag).output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{flag}");
    }
}
