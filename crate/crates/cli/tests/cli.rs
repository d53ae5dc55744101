use std::path::PathBuf;
use std::process::{Command, Output};

use ubp_core::report::Report;

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn ubp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ubp")).args(args).output().unwrap()
}

fn two_state() -> String {
    data("two_state.json").display().to_string()
}

#[test]
fn afp_prints_open_interval() {
    let out = ubp(&["afp", "--market", &two_state()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "(-1, 1) open");
}

#[test]
fn afp_grid_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("afp.csv");
    let out = ubp(&["afp", "--density", "sec4", "--grid", "-1.5:1.5:7", "--out", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "price,is_afp,witness_min_mass,certificate_x,certificate_q");
    let flags: Vec<&str> = lines.map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(flags, ["false", "false", "true", "true", "true", "false", "false"]);
}

#[test]
fn thm1_on_two_state_market() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("thm1.json");
    let args = ["verify-thm1", "--market", &two_state(), "--utility", "log", "--samples", "20", "--seed", "7", "--out", path.to_str().unwrap()];
    let out = ubp(&args);
    assert_eq!(out.status.code(), Some(0));
    let report = Report::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!((report.passes, report.total()), (40, 40));
    assert_eq!(report.seed, Some(7));
    assert!(report.failures.is_empty());
    assert!(path.with_extension("csv").exists());
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let path = dir.path().join(name);
        let out = ubp(&["verify-thm1", "--market", &two_state(), "--utility", "power", "--gamma", "0.3", "--samples", "8", "--seed", "11", "--out", path.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0));
        (std::fs::read(&path).unwrap(), std::fs::read(path.with_extension("csv")).unwrap())
    };
    assert_eq!(run("a.json"), run("b.json"));
}

#[test]
fn every_report_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cases: Vec<Vec<String>> = vec![
        vec!["verify-thm1".into(), "--market".into(), two_state(), "--samples".into(), "3".into()],
        vec!["verify-thm2".into(), "--density".into(), "sec4".into(), "--utility".into(), "power".into(), "--x".into(), "2".into(), "--q".into(), "2".into()],
        vec!["verify-usc".into(), "--density".into(), "sec4".into(), "--utility".into(), "power".into(), "--x".into(), "1".into(), "--q".into(), "1".into()],
        vec!["verify-dichotomy".into(), "--market".into(), two_state(), "--grid".into(), "0.5:1:2".into(), "--samples".into(), "5".into()],
        vec!["marginal".into(), "--market".into(), two_state(), "--x".into(), "1".into(), "--q".into(), "-0.5".into(), "--price".into(), "0.5".into()],
        vec!["example-sec4".into(), "--x".into(), "2".into()],
    ];
    for (i, mut args) in cases.into_iter().enumerate() {
        let path = dir.path().join(format!("r{i}.json"));
        args.extend(["--out".into(), path.display().to_string()]);
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = ubp(&refs);
        assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        let text = std::fs::read_to_string(&path).unwrap();
        let report = Report::from_json(&text).unwrap();
        assert_eq!(report.to_json().unwrap(), text, "{args:?}");
        assert!(report.all_passed());
    }
}

#[test]
fn example_writes_plot_tables() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sec4.json");
    let out = ubp(&["example-sec4", "--x", "1.0", "--out", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let h = std::fs::read_to_string(dir.path().join("sec4_h.csv")).unwrap();
    assert!(h.starts_with("q,h,h_prime\n"));
    assert_eq!(h.lines().count(), 22);
    let m = std::fs::read_to_string(dir.path().join("sec4_maximizer.csv")).unwrap();
    assert!(m.starts_with("p,maximizer_q\n"));
    // every maximizer sits on the ray q = x = 1
    for line in m.lines().skip(1) {
        let q: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!((q - 1.0).abs() < 1e-6);
    }
}

#[test]
fn value_surface_csv() {
    let out = ubp(&["umax", "--market", &two_state(), "--utility", "log", "--grid", "1:2:2", "--grid", "-1:1:3"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[0][2], "-inf");
    assert_eq!(rows[0][3], "0.0000000000000000e0");
    let u: f64 = rows[4][2].parse().unwrap();
    assert!((u - 2f64.ln()).abs() < 1e-12);
}

#[test]
fn verification_failure_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let out = ubp(&["example-sec4", "--density", "sec4-half", "--out", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let report = Report::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert!(!report.failures.is_empty());
    assert!(report.checks.iter().any(|c| c.name == "normalizer" && !c.pass));
}

#[test]
fn input_errors_exit_two() {
    let out = ubp(&["verify-thm1", "--market", &two_state(), "--out", "/nonexistent-dir/report.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());

    let out = ubp(&["afp", "--market", "/nonexistent-dir/market.json"]);
    assert_eq!(out.status.code(), Some(2));

    let out = ubp(&["verify-thm2", "--market", &two_state(), "--utility", "power", "--x", "1", "--q", "1"]);
    assert_eq!(out.status.code(), Some(2));

    let out = ubp(&["umax", "--market", &two_state(), "--utility", "power", "--gamma", "1.5", "--x", "1", "--q", "0"]);
    assert_eq!(out.status.code(), Some(2));

    let out = ubp(&["umax", "--market", &two_state(), "--grid", "1:0:3"]);
    assert_eq!(out.status.code(), Some(2));
}
