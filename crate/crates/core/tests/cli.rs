use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use quantcal::pava;
use quantcal::runner_io::{read_series, BaseOrder};

fn quantcal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quantcal")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SERIES: &str =
    "t,y,q_0.1,q_0.5,q_0.9\n1,0.3,-1,0,1\n2,1.7,-1,0.2,1\n3,-0.4,-0.5,0,1.5\n4,2.2,-1,0,1\n5,0.1,-1,0,1\n";

#[test]
fn run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.csv");
    fs::write(&input, SERIES).unwrap();
    let out = dir.path().join("out");
    let o = quantcal(&["run", "--input", p(&input), "--variant", "multiqt", "--eta", "0.5", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let forecasts = fs::read_to_string(out.join("forecasts.csv")).unwrap();
    assert!(forecasts.starts_with("t,y,q_0.1,q_0.5,q_0.9,cov_0.1,cov_0.5,cov_0.9\n"));
    assert_eq!(forecasts.lines().count(), 6);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    for key in
        ["coverage", "calibration_error", "quantile_loss", "crossing_fraction", "pit_entropy", "regret", "bounds"]
    {
        assert!(report.get(key).is_some(), "missing {key}");
    }
    assert_eq!(report["bounds"]["calibration_bound"]["holds"], true);
    let calib = fs::read_to_string(out.join("calibration.csv")).unwrap();
    assert!(calib.starts_with("level,desired,actual\n0.1,0.1,"));
}

#[test]
fn vanishing_step_leaves_projected_base() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.csv");
    fs::write(&input, SERIES).unwrap();
    let out = dir.path().join("out");
    let o = quantcal(&["run", "--input", p(&input), "--eta", "1e-12", "--out", p(&out)]);
    assert_eq!(code(&o), 0);
    let base = read_series(&input, BaseOrder::Require).unwrap();
    let issued = read_series(&out.join("forecasts.csv"), BaseOrder::Require).unwrap();
    for (b, q) in base.points.iter().zip(&issued.points) {
        let proj = pava(&b.base).unwrap();
        for (x, y) in proj.iter().zip(&q.base) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}

#[test]
fn crossed_base_needs_repair() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.csv");
    fs::write(&input, "t,y,q_0.25,q_0.75\n1,0,1,0\n2,0,0,1\n").unwrap();
    let out = dir.path().join("out");
    let o = quantcal(&["run", "--input", p(&input), "--eta", "0.1", "--out", p(&out)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
    let o = quantcal(&["run", "--input", p(&input), "--eta", "0.1", "--repair-base=isotonic", "--out", p(&out)]);
    assert_eq!(code(&o), 0);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let out = dir.path().join("out");
    assert_eq!(code(&quantcal(&["adversarial", "--scenario", "nope"])), 2);
    assert_eq!(code(&quantcal(&["run", "--input", p(&missing), "--eta", "0.1", "--out", p(&out)])), 1);
    assert_eq!(
        code(&quantcal(&["run", "--input", p(&missing), "--variant", "bogus", "--eta", "0.1", "--out", p(&out)])),
        2
    );
    assert_eq!(code(&quantcal(&["run", "--input", p(&missing), "--out", p(&out)])), 2);
    let input = dir.path().join("in.csv");
    fs::write(&input, SERIES).unwrap();
    let o = quantcal(&[
        "run",
        "--input",
        p(&input),
        "--variant",
        "posthoc_sort",
        "--delay",
        "2",
        "--eta",
        "0.1",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 2);
    let o = quantcal(&["run", "--input", p(&input), "--eta", "-1", "--out", p(&out)]);
    assert_eq!(code(&o), 2);
    fs::write(&input, "t,y,q_0.5\n1,0,0\n1,0,0\n").unwrap();
    let o = quantcal(&["run", "--input", p(&input), "--eta", "0.1", "--out", p(&out)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("duplicate time"));
}

#[test]
fn adversarial_reports() {
    let o = quantcal(&["adversarial", "--scenario", "sorted_qt_cycle"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("qt_independent           coverage 0.5/0.75"));
    assert!(text.contains("posthoc_sort             coverage 0.375/0.875"));
    assert!(text.lines().any(|l| l.starts_with("multiqt ") && l.ends_with("within true")));

    let dir = tempfile::tempdir().unwrap();
    let o = quantcal(&[
        "adversarial",
        "--scenario",
        "pgd_cycle",
        "--alpha",
        "0.2",
        "--beta",
        "0.3",
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(code(&o), 0);
    let cmp: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("comparison.json")).unwrap()).unwrap();
    assert_eq!(cmp["rows"][0]["variant"], "projected_gd");
    assert_eq!(cmp["rows"][1]["within_bound"], true);

    // The exported stream reproduces the projected-descent coverages through `run`.
    let out = dir.path().join("run");
    let series = dir.path().join("series.csv");
    let o = quantcal(&["run", "--input", p(&series), "--variant", "projected_gd", "--eta", "1", "--out", p(&out)]);
    assert_eq!(code(&o), 0);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["coverage"], serde_json::json!([0.0, 0.5]));

    assert_eq!(code(&quantcal(&["adversarial", "--scenario", "pgd_cycle", "--alpha", "0.2", "--beta", "0.4"])), 2);
}

#[test]
fn sweep_on_pgd_stream() {
    let dir = tempfile::tempdir().unwrap();
    let o = quantcal(&["adversarial", "--scenario", "pgd_cycle", "--out", p(dir.path())]);
    assert_eq!(code(&o), 0);
    let series = dir.path().join("series.csv");
    let o = quantcal(&["sweep", "--input", p(&series), "--variant", "multiqt", "--eta-grid", "0.01,0.1,1"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 3);
    let cal: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(cal[2] <= cal[0]);
    let bound: Vec<f64> = rows.iter().map(|r| r[6].parse().unwrap()).collect();
    assert!(bound[0] > 0.0 && bound.iter().all(|b| b.is_finite()));
    assert_eq!(code(&quantcal(&["sweep", "--input", p(&series), "--eta-grid", "0,1"])), 2);
}

#[test]
fn metrics_on_issued_forecasts() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.csv");
    fs::write(&input, SERIES).unwrap();
    let out = dir.path().join("out");
    assert_eq!(code(&quantcal(&["run", "--input", p(&input), "--eta", "0.5", "--out", p(&out)])), 0);
    let o = quantcal(&["metrics", "--input", p(&out.join("forecasts.csv"))]);
    assert_eq!(code(&o), 0);
    let fresh: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(fresh["coverage"], report["coverage"]);
    assert_eq!(fresh["quantile_loss"], report["quantile_loss"]);
    assert_eq!(fresh["pit_entropy"], report["pit_entropy"]);
}

#[test]
fn synth_respects_seed() {
    let a = Command::new(env!("CARGO_BIN_EXE_quantcal"))
        .args(["synth", "--steps", "50"])
        .env("QUANTCAL_SEED", "5")
        .output()
        .unwrap();
    let b = Command::new(env!("CARGO_BIN_EXE_quantcal"))
        .args(["synth", "--steps", "50"])
        .env("QUANTCAL_SEED", "5")
        .output()
        .unwrap();
    let c = Command::new(env!("CARGO_BIN_EXE_quantcal"))
        .args(["synth", "--steps", "50"])
        .env("QUANTCAL_SEED", "6")
        .output()
        .unwrap();
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
    let bad = Command::new(env!("CARGO_BIN_EXE_quantcal")).args(["synth"]).env("QUANTCAL_SEED", "x").output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn eta_heuristic_run() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.csv");
    fs::write(&input, SERIES).unwrap();
    let out = dir.path().join("out");
    let o = quantcal(&["run", "--input", p(&input), "--eta-heuristic", "--delay", "1", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["crossing_fraction"], 0.0);
    let o = quantcal(&["run", "--input", p(&input), "--eta-heuristic", "--eta", "0.1", "--out", p(&out)]);
    assert_eq!(code(&o), 2);
}
