use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hypergadget::dynamics::{read_curve_csv, read_sweep_csv, CURVE_COLUMNS, SWEEP_COLUMNS, SWEEP_ERROR_COLUMNS};
use hypergadget::perturbation::read_dense;
use serde_json::Value;

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hypergadget"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn gadget_lists_square_labels() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["gadget", "--n", "2"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    for label in ["00|11", "10|10", "01|10", "11|00"] {
        assert!(out.contains(label), "{out}");
    }
    let report = json(&dir.path().join("gadget_n2.json"));
    assert_eq!(report["manifold"]["entries"].as_array().unwrap().len(), 4);
    assert_eq!(report["ok"], Value::Bool(true));
    assert!(dir.path().join("gadget_n2.txt").exists());
}

#[test]
fn gadget_rejects_large_n() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["gadget", "--n", "9"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("gadget_n9.json").exists());
}

#[test]
fn gadget_mark_weight_reports_sector_shift() {
    let dir = tempfile::tempdir().unwrap();
    for w in 0..=3usize {
        let o = run(&["gadget", "--n", "3", "--eta", "0.01", "--mark-weight", &w.to_string()], dir.path());
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let mark = &json(&dir.path().join("gadget_n3.json"))["mark"];
        assert_eq!(mark["weight"].as_u64(), Some(w as u64));
        assert_eq!(mark["sector"].as_u64(), Some(3 - w as u64));
        assert!((mark["measured_shift"].as_f64().unwrap() - 0.02).abs() < 1e-9);
    }
}

#[test]
fn effective_report_and_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["effective"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let report = json(&dir.path().join("effective_n3.json"));
    assert!((report["hop_amp"].as_f64().unwrap() + 4e-4 / 3.0).abs() < 1e-15);
    assert!(report["deviation"]["far"].as_f64().unwrap() < 1e-14);
    assert!(report["deviation"]["zero"].as_f64().unwrap() < 1e-14);
    assert_eq!(report["fluctuation"].as_array().unwrap().len(), 4);
    let m = read_dense(&fs::read(dir.path().join("effective_n3.bin")).unwrap()).unwrap();
    assert_eq!(m.shape(), (8, 8));
    assert!((m[(0, 1)] - report["hop_amp"].as_f64().unwrap()).abs() < 1e-12);
}

#[test]
fn effective_exit_code_follows_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["effective", "--tol", "1e-30"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(json(&dir.path().join("effective_n3.json"))["ok"], Value::Bool(false));
}

#[test]
fn walk_curve_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["walk", "--n", "6", "--ratio", "100", "--samples", "512"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let path = dir.path().join("curve.csv");
    assert_eq!(header(&path), CURVE_COLUMNS.join(","));
    let rows = read_curve_csv(&path).unwrap();
    assert_eq!(rows.len(), 512);
    assert!(rows.iter().all(|r| r.n == 6 && r.j_over_eta == 100.0));
    assert!((rows.last().unwrap().t_scaled - 2.0).abs() < 1e-12);
}

#[test]
fn walk_reference_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nested/c.csv");
    let o = run(
        &["walk", "--n", "2", "--ratios", "5,100", "--samples", "16", "--reference", "--out", out.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let rows = read_curve_csv(&out).unwrap();
    assert_eq!(rows.len(), 48);
    assert_eq!(rows.iter().filter(|r| r.j_over_eta.is_infinite()).count(), 16);
}

#[test]
fn default_sweep_has_full_grid() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["sweep"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let path = dir.path().join("sweep.csv");
    assert_eq!(header(&path), SWEEP_COLUMNS.join(","));
    let rows = read_sweep_csv(&path).unwrap();
    assert_eq!(rows.len(), 100);
    assert!(!dir.path().join("sweep.errors.csv").exists());
}

#[test]
fn sweep_is_resumable_and_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["sweep", "--ns", "2,3", "--ratios", "5,50,100"];
    assert_eq!(run(&args, dir.path()).status.code(), Some(0));
    let path = dir.path().join("sweep.csv");
    let first = fs::read(&path).unwrap();
    assert_eq!(read_sweep_csv(&path).unwrap().len(), 6);

    assert_eq!(run(&args, dir.path()).status.code(), Some(0));
    assert_eq!(fs::read(&path).unwrap(), first);

    // Drop one cell; the rerun recomputes only that cell.
    let text = String::from_utf8(first.clone()).unwrap();
    let trimmed: String = text.lines().filter(|l| !l.starts_with("3,50.0,")).map(|l| format!("{l}\n")).collect();
    fs::write(&path, trimmed).unwrap();
    assert_eq!(run(&args, dir.path()).status.code(), Some(0));
    assert_eq!(fs::read(&path).unwrap(), first);
}

#[test]
fn sweep_failures_go_to_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["sweep", "--ns", "2", "--ratios", "0.01,5"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(read_sweep_csv(&dir.path().join("sweep.csv")).unwrap().len(), 1);
    let errors = dir.path().join("sweep.errors.csv");
    assert_eq!(header(&errors), SWEEP_ERROR_COLUMNS.join(","));
    let text = fs::read_to_string(&errors).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().nth(1).unwrap().starts_with("2,0.01,"));
}

#[test]
fn compile_verifies_small_gadget() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["compile", "--n", "2", "--dt", "0.05", "--steps", "20"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let report = json(&dir.path().join("schedule_n2.json"));
    let v = &report["verification"];
    let err = v["spectral_error"].as_f64().unwrap();
    assert!(err > 0.0 && err <= v["bound"].as_f64().unwrap());
    let ops = report["schedule"]["ops"].as_array().unwrap();
    assert!(!ops.is_empty());
    assert!(ops.iter().all(|op| op["angle"].as_f64().unwrap() != 0.0));
    let kinds: std::collections::BTreeSet<&str> = ops.iter().map(|op| op["kind"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["cond_phase", "x_rot", "z_rot"].into());
}

#[test]
fn compile_verify_off_skips_checks() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["compile", "--n", "3", "--verify", "off"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let v = &json(&dir.path().join("schedule_n3.json"))["verification"];
    assert!(v.get("spectral_error").is_none());
    assert!(v.get("probe_error").is_none());
}

#[test]
fn compile_output_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        assert_eq!(run(&["compile", "--n", "3", "--seed", "7"], d.path()).status.code(), Some(0));
    }
    assert_eq!(
        fs::read(a.path().join("schedule_n3.json")).unwrap(),
        fs::read(b.path().join("schedule_n3.json")).unwrap()
    );
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), "n = 3\nJ = 2.0\nout = \"reports\"\n").unwrap();
    assert_eq!(run(&["gadget", "--config", "run.toml"], dir.path()).status.code(), Some(0));
    let report = json(&dir.path().join("reports/gadget_n3.json"));
    assert_eq!(report["spec"]["J"].as_f64(), Some(2.0));
    assert_eq!(run(&["gadget", "--config", "run.toml", "--n", "2"], dir.path()).status.code(), Some(0));
    assert!(dir.path().join("reports/gadget_n2.json").exists());

    fs::write(dir.path().join("bad.toml"), "bogus = 1\n").unwrap();
    assert_eq!(run(&["gadget", "--config", "bad.toml"], dir.path()).status.code(), Some(2));
}

#[test]
fn sym_writes_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["sym", "--n", "8", "--samples", "50"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("sym.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("t,t_scaled,p_marked"));
    assert_eq!(text.lines().count(), 51);
    let summary = json(&dir.path().join("sym.json"));
    assert!(summary["peak_prob"].as_f64().unwrap() > 0.5);
    assert_eq!(summary["marked_sector"].as_u64(), Some(8));
}

#[test]
fn sym_reads_potential_csv() {
    let dir = tempfile::tempdir().unwrap();
    let rows: String = (0..=4).map(|k| format!("{k},{}\n", if k == 2 { -1.0 } else { 0.0 })).collect();
    fs::write(dir.path().join("pot.csv"), format!("k,f\n{rows}")).unwrap();
    let o = run(&["sym", "--n", "4", "--potential-csv", "pot.csv", "--gamma", "0.3"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&dir.path().join("sym.json"))["marked_sector"].as_u64(), Some(2));
}
