use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chazy_cli::commands::{KeplerCheckReport, SimulationMeta, SweepReport, VerifyReport};
use chazy_cli::output::{read_json, read_jsonl, read_trajectory_csv, ScatterRecord};
use chazy_cli::ErrorRecord;
use chazy_core::acceptance::FailureKind;
use chazy_core::kepler::kepler_scattering;
use chazy_core::scattering::ScatteringStatus;
use chazy_core::KeplerOrbit;

const EQUILATERAL_S0: &str = "[1.0, 0.0, -0.5, 0.8660254037844386, -0.5, -0.8660254037844386]";

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path
}

fn chazy(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chazy"))
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn kepler_config(dir: &Path) -> PathBuf {
    write_config(dir, r#"{"masses": [2, 2], "d": 2, "h": 2, "mode": "kepler", "kepler": {"e": 2}}"#)
}

fn error_record(out: &Output) -> ErrorRecord {
    let stderr = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(stderr.lines().last().unwrap()).unwrap()
}

#[test]
fn simulate_kepler_reaches_infinity() {
    let dir = tempfile::tempdir().unwrap();
    let out = chazy("simulate", &kepler_config(dir.path()), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let table = read_trajectory_csv(&dir.path().join("trajectory.csv")).unwrap();
    assert!(table.rows.last().unwrap().rho < 1e-9);
    let meta: SimulationMeta = read_json(&dir.path().join("trajectory.json")).unwrap();
    assert_eq!(meta.samples, table.rows.len());
    assert!(meta.max_energy_drift < 1e-9);
}

#[test]
fn simulate_at_infinity_keeps_rho_zero() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        &format!(
            r#"{{"masses": [1, 1, 1], "d": 2, "h": 1, "mode": "manifold",
            "manifold": {{"s0": {EQUILATERAL_S0}, "s1": [0, 1e-4, 0.0, -0.5e-4, 0, -0.5e-4], "rho1": 0}}, "tau_budget": 10}}"#
        ),
    );
    let out = chazy("simulate", &config, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let table = read_trajectory_csv(&dir.path().join("trajectory.csv")).unwrap();
    assert!(table.rows.len() > 2);
    assert!(table.rows.iter().all(|r| r.rho == 0.0 && r.t.is_none()));
}

#[test]
fn malformed_config_exits_two_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), r#"{"masses": [2, 2], "d": 2, "h": -2, "mode": "kepler", "kepler": {"e": 2}}"#);
    let out = chazy("simulate", &config, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    let rec = error_record(&out);
    assert_eq!(rec.kind, "config");
    assert_eq!(rec.field.as_deref(), Some("h"));

    let config = write_config(dir.path(), r#"{"masses": [2, 2], "d": 2, "h": 2, "mode": "kepler", "kepler": {"ecc": 2}}"#);
    let rec = error_record(&chazy("scatter", &config, dir.path(), &[]));
    assert_eq!(rec.field.as_deref(), Some("kepler.ecc"));

    let out = chazy("scatter", &kepler_config(dir.path()), dir.path(), &["--tol-scale=-1"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_record(&out).field.as_deref(), Some("--tol-scale"));
}

#[test]
fn scatter_kepler_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = chazy("scatter", &kepler_config(dir.path()), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let recs: Vec<ScatterRecord> = read_jsonl(&dir.path().join("scatter.jsonl")).unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].status, ScatteringStatus::Ok);
    let exact = kepler_scattering(&KeplerOrbit::new(2.0, 2.0, 2.0, 2.0).unwrap());
    let fut = recs[0].future.as_ref().unwrap();
    for (x, y) in fut.a.iter().zip(exact.a_prime.iter()) {
        assert!((x - y).abs() < 1e-8);
    }
    for (x, y) in fut.c.as_ref().unwrap().iter().zip(exact.c_prime.iter()) {
        assert!((x - y).abs() < 1e-6);
    }
}

#[test]
fn scatter_at_infinity_is_identity_in_a() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        &format!(
            r#"{{"masses": [1, 1, 1], "d": 2, "h": 1, "mode": "manifold",
            "manifold": {{"s0": {EQUILATERAL_S0}, "s1": [0, 1, -0.8660254037844386, -0.5, 0.8660254037844386, -0.5], "rho1": 0}}}}"#
        ),
    );
    let out = chazy("scatter", &config, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rec = &read_jsonl::<ScatterRecord>(&dir.path().join("scatter.jsonl")).unwrap()[0];
    assert_eq!(rec.status, ScatteringStatus::Ok);
    let fut = rec.future.as_ref().unwrap();
    let dev = fut.a.iter().zip(&rec.past.a).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(dev < 1e-9, "A' - A = {dev:e}");
    assert_eq!(fut.rho1, 0.0);
}

#[test]
fn scatter_into_collision_is_singular() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{"masses": [1, 1], "d": 2, "h": 1, "mode": "manifold",
        "manifold": {"s0": [1, 0, -1, 0], "s1": [0, 0, 0, 0], "rho1": 0.001}}"#,
    );
    let out = chazy("scatter", &config, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rec = &read_jsonl::<ScatterRecord>(&dir.path().join("scatter.jsonl")).unwrap()[0];
    assert_eq!(rec.status, ScatteringStatus::Singular, "{:?}", rec.error);
    assert!(rec.future.is_none());
}

fn sweep_config(dir: &Path, rho1: &str, count: usize) -> PathBuf {
    write_config(
        dir,
        &format!(
            r#"{{"masses": [1, 1, 1], "d": 2, "h": 1, "mode": "manifold",
            "manifold": {{"s0": {EQUILATERAL_S0}, "s1": [0, 0, 0, 0, 0, 0], "rho1": 0.001}},
            "sweep": {{"rho1": {rho1}, "random_directions": {{"count": {count}, "seed": 3}}}}}}"#
        ),
    )
}

#[test]
fn equilateral_sweep_has_full_rank_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let config = sweep_config(dir.path(), "[0.001, 0.0005, 0.00025, 0.000125, 0.0000625]", 5);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(chazy("sweep", &config, &a, &["--workers", "4"]).status.code(), Some(0));
    assert_eq!(chazy("sweep", &config, &b, &["--workers", "1"]).status.code(), Some(0));
    let recs: Vec<ScatterRecord> = read_jsonl(&a.join("sweep.jsonl")).unwrap();
    assert_eq!(recs.len(), 25);
    assert!(recs.iter().enumerate().all(|(k, r)| r.index == k));
    let report: SweepReport = read_json(&a.join("sweep_summary.json")).unwrap();
    assert_eq!(report.seeds, 25);
    assert_eq!(report.scales.len(), 5);
    let jac = report.jacobian.unwrap();
    assert_eq!(jac.full_rank, 3);
    assert_eq!(jac.rank, Some(3));
    assert_eq!(std::fs::read(a.join("sweep.jsonl")).unwrap(), std::fs::read(b.join("sweep.jsonl")).unwrap());
    assert_eq!(std::fs::read(a.join("sweep_summary.json")).unwrap(), std::fs::read(b.join("sweep_summary.json")).unwrap());
}

#[test]
fn empty_sweep_writes_empty_results() {
    let dir = tempfile::tempdir().unwrap();
    let config = sweep_config(dir.path(), "[0.001]", 0);
    assert_eq!(chazy("sweep", &config, dir.path(), &[]).status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(dir.path().join("sweep.jsonl")).unwrap(), "");
    let report: SweepReport = read_json(&dir.path().join("sweep_summary.json")).unwrap();
    assert_eq!(report.seeds, 0);
    assert!(report.jacobian.is_none());
    assert!(report.notes.iter().any(|n| n.contains("zero seeds")));
}

#[test]
fn kepler_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = chazy("kepler-check", &kepler_config(dir.path()), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0));
    let report: KeplerCheckReport = read_json(&dir.path().join("kepler_check.json")).unwrap();
    assert!(report.passed && report.max_rel_err < 1e-6);
    assert_eq!(report.rows.len(), 8);
}

#[test]
fn verify_subset_passes_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{"masses": [2, 2], "d": 2, "h": 2, "mode": "kepler", "kepler": {"e": 2}, "verify": {"only": [1, 3, 7]}}"#,
    );
    let out = chazy("verify", &config, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 3);
    let report: VerifyReport = read_json(&dir.path().join("verify_report.json")).unwrap();
    assert!(report.passed);
    assert_eq!(report.criteria.iter().map(|c| c.id).collect::<Vec<_>>(), vec![1, 3, 7]);
}

#[test]
fn verify_names_the_injected_b_sign_fault() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{"masses": [2, 2], "d": 2, "h": 2, "mode": "kepler", "kepler": {"e": 2},
        "verify": {"only": [4], "fault": "wrong_b_sign"}}"#,
    );
    let out = chazy("verify", &config, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(1));
    let report: VerifyReport = read_json(&dir.path().join("verify_report.json")).unwrap();
    assert!(!report.passed);
    assert_eq!(report.criteria[0].name, "chazy_coefficient_law");
    assert_eq!(report.criteria[0].failure, Some(FailureKind::Logic));
}

#[test]
fn verify_at_unattainable_tolerance_flags_tolerance_bound() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{"masses": [2, 2], "d": 2, "h": 2, "mode": "kepler", "kepler": {"e": 2}, "verify": {"only": [1, 2, 9]}}"#,
    );
    // Default rtol 1e-11 scaled to 1e-14.
    let out = chazy("verify", &config, dir.path(), &["--tol-scale", "1e-3"]);
    let report: VerifyReport = read_json(&dir.path().join("verify_report.json")).unwrap();
    for c in report.criteria.iter().filter(|c| !c.passed) {
        assert_eq!(c.failure, Some(FailureKind::ToleranceBound), "{}", c.summary);
    }
    assert_eq!(out.status.code(), Some(if report.passed { 0 } else { 1 }));
}
