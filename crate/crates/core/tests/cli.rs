use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fso(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fso-nmpc")).args(args).output().expect("spawn fso-nmpc")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn metric(dir: &Path, key: &str) -> f64 {
    let text = fs::read_to_string(dir.join("metrics.txt")).unwrap();
    let line = text.lines().find(|l| l.starts_with(&format!("{key} = "))).expect("metric present");
    line.split(" = ").nth(1).unwrap().parse().unwrap()
}

#[test]
fn validate_default_and_errors() {
    let ok = fso(&["validate"]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).starts_with("schema_version = 1\n"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "mission.duration = 26\nmission.colour = red\n").unwrap();
    let o = fso(&["validate", "--config", path(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("mission.colour"), "{}", stderr(&o));

    let o = fso(&["validate", "--set", "rates.control_hz=300"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("integer multiple"), "{}", stderr(&o));

    assert_eq!(fso(&["validate", "--config", "/nonexistent/x.cfg"]).status.code(), Some(1));
    assert_eq!(fso(&["bogus"]).status.code(), Some(1));
}

#[test]
fn run_writes_three_artefacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = fso(&["run", "--duration", "0.1", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["log.csv", "metrics.txt", "config.normalized"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let normalized = fs::read_to_string(out.join("config.normalized")).unwrap();
    assert!(normalized.contains("mission.duration = 0.1\n"));
    let log = fs::read_to_string(out.join("log.csv")).unwrap();
    assert_eq!(log.lines().count(), 2 + 101);

    let m = fso(&["metrics", "--log", path(&out.join("log.csv")), "--duration", "0.1"]);
    assert_eq!(m.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&m.stdout).contains("mean_link_quality = "));
}

#[test]
fn bad_config_leaves_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = fso(&["run", "--set", "obstacle.1.radius=-1", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("obstacle radius"));
    assert!(!out.exists());
}

#[test]
fn solver_abort_exits_two_with_partial_log() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = fso(&["run", "--set", "solver.max_qp_iters=1", "--duration", "0.1", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let metrics = fs::read_to_string(out.join("metrics.txt")).unwrap();
    assert!(metrics.starts_with("status = aborted at "));
    assert!(out.join("log.csv").is_file());
}

#[test]
fn empty_range_interval_still_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = fso(&["run", "--set", "optics.range_max=0.1", "--duration", "0.02", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let log = fs::read_to_string(out.join("log.csv")).unwrap();
    let mut lines = log.lines().skip(1);
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|c| *c == "y_range").unwrap();
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    let range: f64 = first[col].parse().unwrap();
    assert!(0.1 - range < 0.0);
    assert!(metric(&out, "solver.min_predicted_range_margin") < 0.0);
}

#[test]
fn sweep_grid_behaviour() {
    let dir = tempfile::tempdir().unwrap();
    let o = fso(&["sweep", "--out", path(&dir.path().join("empty"))]);
    assert_eq!(o.status.code(), Some(1));
    let o = fso(&["sweep", "--grid", "weights.slack=", "--out", path(&dir.path().join("empty2"))]);
    assert_eq!(o.status.code(), Some(1));

    // a single grid point reproduces `run`
    let single = dir.path().join("single");
    let o = fso(&["sweep", "--duration", "0.05", "--grid", "weights.slack=10000", "--jobs", "1", "--out", path(&single)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let run = dir.path().join("run");
    assert_eq!(fso(&["run", "--duration", "0.05", "--out", path(&run)]).status.code(), Some(0));
    assert_eq!(
        fs::read(single.join("run_000/log.csv")).unwrap(),
        fs::read(run.join("log.csv")).unwrap()
    );
    let summary = fs::read_to_string(single.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
    assert!(summary.starts_with("run,weights.slack,exit_code,mean_link_quality"));

    // a failing combination is recorded and the sweep still finishes
    let mixed = dir.path().join("mixed");
    let o = fso(&["sweep", "--duration", "0.02", "--grid", "safety.margin=0.25,-1", "--out", path(&mixed)]);
    assert_eq!(o.status.code(), Some(1));
    let summary = fs::read_to_string(mixed.join("summary.csv")).unwrap();
    assert!(summary.contains("run_000,0.25,0,"));
    assert!(summary.contains("run_001,-1,1,"));
}

#[test]
fn smaller_slack_weight_allows_larger_slack() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let o = fso(&["sweep", "--duration", "5.5", "--grid", "weights.slack=100,10000", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let soft = metric(&out.join("run_000"), "max_slack");
    let stiff = metric(&out.join("run_001"), "max_slack");
    assert!(soft >= stiff, "max_slack {soft} (Q=1e2) vs {stiff} (Q=1e4)");
    assert!(stiff > 0.0);
}
