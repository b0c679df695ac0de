//! End-to-end tests of the `jiq` binary.

use std::process::{Command, Output};

fn jiq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jiq"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn formula_prints_csv_row() {
    let out = jiq(&["formula", "--lambda", "0.5", "--r", "10"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("lambda,variant,metric,value,dispersion,source"));
    assert_eq!(lines.next(), Some("0.5,jiq-random,mean_time,1.09091,,formula"));
}

#[test]
fn resolved_configuration_is_echoed() {
    let out = jiq(&["formula", "--lambda", "0.7"]);
    assert!(out.status.success());
    let err = stderr(&out);
    assert!(err.contains("resolved configuration"));
    assert!(err.contains("lambda = 0.7"));
    assert!(err.contains("r = 10"));
}

#[test]
fn invalid_rate_fails_with_one_line_diagnostic() {
    let out = jiq(&["formula", "--lambda", "1.2"]);
    assert!(!out.status.success());
    let err = stderr(&out);
    let diag: Vec<&str> = err.lines().filter(|l| l.starts_with("error:")).collect();
    assert_eq!(diag.len(), 1);
    assert!(diag[0].contains("unstable arrival rate"));
}

#[test]
fn unknown_table_id_fails() {
    let out = jiq(&["table", "9"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("unknown table id"));
}

#[test]
fn formula_sweep_covers_reference_grid() {
    let out = jiq(&["sweep", "formula"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 11); // header + 10 grid points
    assert!(lines[1].starts_with("0.5,jiq-random,mean_time,1.09091"));
    assert!(lines[10].starts_with("0.99,jiq-random,mean_time,10.0000"));
}

#[test]
fn sim_sweep_is_byte_identical_for_fixed_seed() {
    let args = [
        "sweep",
        "simulate",
        "--lambdas",
        "0.5,0.8",
        "--servers",
        "50",
        "--dispatchers",
        "5",
        "--warmup",
        "20",
        "--horizon",
        "200",
        "--trials",
        "3",
        "--seed",
        "7",
    ];
    let a = jiq(&args);
    let b = jiq(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(stdout(&a), stdout(&b));
    let text = stdout(&a);
    assert!(text.contains("mean_time"));
    assert!(text.contains("var_time"));
}

#[test]
fn fluid_writes_trajectory_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("traj.csv");
    let out = jiq(&[
        "fluid",
        "--lambda",
        "0.9",
        "--t-end",
        "5",
        "--imax",
        "32",
        "--cmax",
        "32",
        "--output",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,q0,mean_load,mean_time,resid_q,resid_s"));
    assert_eq!(lines.count(), 6); // t = 0..5 sampled every 1.0
    let rows = stdout(&out);
    assert!(rows.contains("mean_time"));
    assert!(rows.contains(",ode"));
}

#[test]
fn equilibrium_reports_reference_value() {
    let out = jiq(&["equilibrium", "--lambda", "0.9"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let mean_line = text
        .lines()
        .find(|l| l.contains("mean_time"))
        .expect("mean_time row");
    assert!(mean_line.starts_with("0.9,jiq-random,mean_time,1.83659"));
}

#[test]
fn simulate_dumps_per_trial_records() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("records");
    let out = jiq(&[
        "simulate",
        "--lambda",
        "0.5",
        "--servers",
        "20",
        "--dispatchers",
        "2",
        "--warmup",
        "10",
        "--horizon",
        "100",
        "--trials",
        "2",
        "--dump-records",
        prefix.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    for trial in 0..2 {
        let path = dir.path().join(format!("records.trial{trial}.csv"));
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("arrival,completion,server,assignment"));
        let body: Vec<&str> = lines.collect();
        assert!(!body.is_empty());
        for line in body {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields.len(), 4);
            let arrival: f64 = fields[0].parse().unwrap();
            let completion: f64 = fields[1].parse().unwrap();
            assert!(completion > arrival);
            assert!(["iqueue", "random", "supermarket"].contains(&fields[3]));
        }
    }
}

#[test]
fn output_flag_writes_sorted_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rows.csv");
    let out = jiq(&[
        "sweep",
        "formula",
        "--lambdas",
        "0.9,0.5,0.7",
        "--output",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    let lambdas: Vec<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(lambdas, ["0.5", "0.7", "0.9"], "rows sorted on emission");
}

#[test]
fn supermarket_simulation_runs_without_dispatchers() {
    let out = jiq(&[
        "simulate",
        "--lambda",
        "0.5",
        "--policy",
        "supermarket",
        "--d",
        "2",
        "--servers",
        "20",
        "--warmup",
        "10",
        "--horizon",
        "100",
        "--trials",
        "2",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("sq2"));
}
