use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn bilevel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bilevel")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn run_in(dir: &Path, cfg: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    bilevel(&args)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Writes a modified copy of the scalar config.
fn scalar_with(dir: &Path, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut v = json(&config("scalar.json"));
    edit(&mut v);
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
    path
}

#[test]
fn scalar_run_converges_to_lower_bound() {
    let tmp = TempDir::new().unwrap();
    let out = run_in(tmp.path(), &config("scalar.json"), &["run"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = json(&tmp.path().join("summary.json"));
    assert_eq!(summary["status"], "converged");
    let p = summary["final_p"][0].as_f64().unwrap();
    assert!((p - 0.5).abs() <= 1e-6, "p = {p}");
    let csv = fs::read_to_string(tmp.path().join("trace.csv")).unwrap();
    assert!(csv.starts_with("ell,p_0,dp_norm,lambda_p,cost_outer,omega_u,grad_err,d_norm,status\n"));
    // No oracle attached: measurement cells are NA.
    assert!(csv.lines().nth(1).unwrap().contains(",NA,NA,NA,NA,"));
}

#[test]
fn malformed_json_exits_2_with_message() {
    let tmp = TempDir::new().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{ \"model\": ").unwrap();
    let out = run_in(tmp.path(), &bad, &["run"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("bad.json"), "{}", stderr(&out));
}

#[test]
fn unknown_field_exits_2_naming_it() {
    let tmp = TempDir::new().unwrap();
    let cfg = scalar_with(tmp.path(), |v| v["solver"]["kapa"] = 3.into());
    let out = run_in(tmp.path(), &cfg, &["run"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("kapa"), "{}", stderr(&out));
}

#[test]
fn missing_config_and_bad_flags_exit_2() {
    assert_eq!(code(&bilevel(&["run"])), 2);
    assert_eq!(code(&bilevel(&["frobnicate"])), 2);
    let tmp = TempDir::new().unwrap();
    let out = run_in(tmp.path(), &config("scalar.json"), &["run", "--kappa", "0"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn zero_noise_equals_no_noise_bitwise() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    assert_eq!(code(&run_in(a.path(), &config("scalar.json"), &["run"])), 0);
    assert_eq!(code(&run_in(b.path(), &config("scalar.json"), &["run", "--noise", "0.0"])), 0);
    for file in ["trace.csv", "summary.json"] {
        assert_eq!(fs::read(a.path().join(file)).unwrap(), fs::read(b.path().join(file)).unwrap(), "{file}");
    }
}

#[test]
fn noisy_run_stays_bounded_and_exits_0() {
    let tmp = TempDir::new().unwrap();
    let out = run_in(tmp.path(), &config("scalar_interior.json"), &["run", "--noise", "0.01"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = json(&tmp.path().join("summary.json"));
    assert_eq!(summary["status"], "max_iter");
    assert!(summary["final_p"][0].as_f64().unwrap().abs() < 0.1);
}

#[test]
fn nonconverged_run_exits_1() {
    let tmp = TempDir::new().unwrap();
    let cfg = scalar_with(tmp.path(), |v| {
        v["solver"]["max_outer"] = 1.into();
        v["solver"]["nu"] = 0.01.into();
        v["solver"]["mu"] = 0.5.into();
    });
    let out = run_in(tmp.path(), &cfg, &["run"]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    assert!(tmp.path().join("trace.csv").exists());
}

#[test]
fn scalar_certifies_with_finite_k_min() {
    let tmp = TempDir::new().unwrap();
    let out = run_in(tmp.path(), &config("scalar.json"), &["certify"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let cert = json(&tmp.path().join("certificate.json"));
    assert_eq!(cert["certified"], true);
    assert!(cert["k_min"].as_u64().unwrap() >= 1);
    assert!(String::from_utf8_lossy(&out.stdout).contains("K_min"));
}

#[test]
fn oversized_mu_fails_certify_and_check_with_1() {
    let tmp = TempDir::new().unwrap();
    // H = 1, so mu = 1.5 gives |1 - 2 mu| = 2.
    let cfg = scalar_with(tmp.path(), |v| {
        v["solver"]["mu"] = 1.5.into();
        v["solver"]["nu"] = 1.0.into();
    });
    assert_eq!(code(&run_in(tmp.path(), &cfg, &["certify"])), 1);
    let out = run_in(tmp.path(), &cfg, &["check"]);
    assert_eq!(code(&out), 1);
    let report = json(&tmp.path().join("check_report.json"));
    let failed: Vec<&str> = report["suites"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|s| s["pass"] == false)
        .map(|s| s["name"].as_str().unwrap())
        .collect();
    assert_eq!(failed, ["inner_contraction_rate"]);
}

#[test]
fn check_passes_on_scalar_and_verdicts_survive_seed_change() {
    for seed in ["1", "99"] {
        let tmp = TempDir::new().unwrap();
        let out = run_in(tmp.path(), &config("scalar.json"), &["check", "--seed", seed]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        assert_eq!(json(&tmp.path().join("check_report.json"))["pass"], true);
    }
}

fn certified_run(dir: &Path) {
    let cfg = config("scalar.json");
    assert_eq!(code(&run_in(dir, &cfg, &["certify"])), 0);
    assert_eq!(code(&run_in(dir, &cfg, &["run", "--with-oracle"])), 0);
}

#[test]
fn verify_passes_on_certified_run() {
    let tmp = TempDir::new().unwrap();
    certified_run(tmp.path());
    // Verification needs only the stored files, not the config.
    let out = bilevel(&["--out", tmp.path().to_str().unwrap(), "verify"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = json(&tmp.path().join("iss_report.json"));
    assert_eq!(report["verdict"], "pass");
    assert_eq!(report["certified"], true);
}

#[test]
fn verify_flags_tampered_row() {
    let tmp = TempDir::new().unwrap();
    certified_run(tmp.path());
    let path = tmp.path().join("trace.csv");
    let csv = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = csv.lines().map(String::from).collect();
    // Inflate omega_u (column 5) on row 2.
    let mut cells: Vec<String> = lines[3].split(',').map(String::from).collect();
    cells[5] = "5.0e0".into();
    lines[3] = cells.join(",");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    let out = bilevel(&["--out", tmp.path().to_str().unwrap(), "verify"]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    let report = json(&tmp.path().join("iss_report.json"));
    assert_eq!(report["verdict"], "fail");
    let flagged = report["checks"].as_array().unwrap().iter().any(|c| c["name"] == "inner_dissipation" && c["violations"].as_u64().unwrap() > 0);
    assert!(flagged, "{report}");
    assert!(stderr(&out).contains("inner_dissipation"));
}

#[test]
fn verify_without_oracle_columns_is_incomplete() {
    let tmp = TempDir::new().unwrap();
    let cfg = config("scalar.json");
    assert_eq!(code(&run_in(tmp.path(), &cfg, &["certify"])), 0);
    assert_eq!(code(&run_in(tmp.path(), &cfg, &["run"])), 0);
    let out = bilevel(&["--out", tmp.path().to_str().unwrap(), "verify"]);
    assert_eq!(code(&out), 1);
    assert_eq!(json(&tmp.path().join("iss_report.json"))["verdict"], "incomplete");
}

#[test]
fn verify_missing_certificate_exits_2() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&run_in(tmp.path(), &config("scalar.json"), &["run", "--with-oracle"])), 0);
    let out = bilevel(&["--out", tmp.path().to_str().unwrap(), "verify"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("certificate.json"), "{}", stderr(&out));
}

#[test]
fn verify_schema_mismatch_exits_2() {
    let tmp = TempDir::new().unwrap();
    certified_run(tmp.path());
    let path = tmp.path().join("trace.csv");
    let csv = fs::read_to_string(&path).unwrap().replacen("status\n", "state\n", 1);
    fs::write(&path, csv).unwrap();
    assert_eq!(code(&bilevel(&["--out", tmp.path().to_str().unwrap(), "verify"])), 2);
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn kappa_sweep_writes_points_and_rows() {
    let tmp = TempDir::new().unwrap();
    let out = run_in(tmp.path(), &config("scalar.json"), &["sweep", "--jobs", "3"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = csv_rows(&tmp.path().join("sweep.csv"));
    assert_eq!(rows.len(), 5);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row[0], (i + 1).to_string());
        assert_eq!(row[9], "converged");
        assert!(tmp.path().join(format!("kappa_{:04}/trace.csv", i + 1)).exists());
    }
}

#[test]
fn gamma_kappa_column_decreases_geometrically() {
    let tmp = TempDir::new().unwrap();
    // mu = 0.3 gives eta = 0.4 on the scalar instance.
    let cfg = scalar_with(tmp.path(), |v| {
        v["solver"]["mu"] = 0.3.into();
        v["solver"]["nu"] = 1.0.into();
    });
    assert_eq!(code(&run_in(tmp.path(), &cfg, &["sweep"])), 0);
    let gk: Vec<f64> = csv_rows(&tmp.path().join("sweep.csv")).iter().map(|r| r[1].parse().unwrap()).collect();
    for w in gk.windows(2) {
        assert!(w[1] < w[0]);
    }
    // gamma_kappa ~ c * eta^kappa for large kappa.
    let ratio = gk[4] / gk[3];
    assert!((ratio - 0.4).abs() < 0.05, "ratio {ratio}");
}

#[test]
fn noise_sweep_plateau_nondecreasing_in_amplitude() {
    let tmp = TempDir::new().unwrap();
    let out = run_in(tmp.path(), &config("scalar_interior.json"), &["sweep", "--mode", "noise"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let mut rows: Vec<(f64, f64)> = csv_rows(&tmp.path().join("sweep.csv"))
        .iter()
        .map(|r| (r[0].parse().unwrap(), r[2].parse().unwrap()))
        .collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    assert!(rows[0].1 > 0.0);
    for w in rows.windows(2) {
        assert!(w[1].1 >= w[0].1, "{rows:?}");
    }
}

#[test]
fn single_point_sweep_matches_run_and_certify() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let cfg = scalar_with(a.path(), |v| {
        v["sweep"]["kappa_from"] = 2.into();
        v["sweep"]["kappa_to"] = 2.into();
    });
    assert_eq!(code(&run_in(a.path(), &cfg, &["sweep"])), 0);
    assert_eq!(code(&run_in(b.path(), &cfg, &["certify"])), 0);
    assert_eq!(code(&run_in(b.path(), &cfg, &["run"])), 0);
    assert_eq!(
        fs::read(a.path().join("certificate.json")).unwrap(),
        fs::read(b.path().join("certificate.json")).unwrap()
    );
    assert_eq!(
        fs::read(a.path().join("kappa_0002/trace.csv")).unwrap(),
        fs::read(b.path().join("trace.csv")).unwrap()
    );
}

#[test]
fn outputs_identical_across_reruns() {
    let dirs = [TempDir::new().unwrap(), TempDir::new().unwrap()];
    for (i, d) in dirs.iter().enumerate() {
        let jobs = if i == 0 { "1" } else { "4" };
        for cmd in [&["certify"][..], &["run", "--with-oracle", "--noise", "0.05"], &["verify"], &["sweep"], &["check"]] {
            let mut args = vec!["--jobs", jobs, "--seed", "11"];
            args.extend_from_slice(cmd);
            let out = run_in(d.path(), &config("scalar_interior.json"), &args);
            assert!(code(&out) <= 1, "{cmd:?}: {}", stderr(&out));
        }
    }
    for file in ["certificate.json", "trace.csv", "summary.json", "iss_report.json", "sweep.csv", "check_report.json"] {
        assert_eq!(
            fs::read(dirs[0].path().join(file)).unwrap(),
            fs::read(dirs[1].path().join(file)).unwrap(),
            "{file}"
        );
    }
}
