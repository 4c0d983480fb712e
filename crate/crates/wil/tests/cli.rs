//! End-to-end checks of the command-line front door: exit codes, config
//! strictness, artifact layout, and rerun determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicU64, Ordering};

static DIR_SEQ: AtomicU64 = AtomicU64::new(0);

fn scratch_dir(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!(
        "wil-cli-{}-{}-{}",
        std::process::id(),
        tag,
        DIR_SEQ.fetch_add(1, Ordering::Relaxed)
    ));
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn wil(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wil")).args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("run.conf");
    std::fs::write(&p, body).unwrap();
    p
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

#[test]
fn missing_subcommand_is_usage_error() {
    let out = wil(&[]);
    assert_eq!(code(&out), 64);
    assert!(String::from_utf8_lossy(&out.stderr).contains("usage"));
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let out = wil(&["frobnicate"]);
    assert_eq!(code(&out), 64);
    assert!(String::from_utf8_lossy(&out.stderr).contains("usage"));
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = wil(&["validate", "--bogus"]);
    assert_eq!(code(&out), 64);
}

#[test]
fn validate_default_model_passes() {
    let dir = scratch_dir("validate");
    let out = wil(&["validate", "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(dir.join("assumptions.txt")).unwrap();
    for id in ["A1", "A2", "A3", "A4", "A5", "B1", "B2", "C1", "C2"] {
        assert!(report.contains(&format!("{id} pass")), "missing '{id} pass' in:\n{report}");
    }
    let manifest = std::fs::read_to_string(dir.join("run.manifest")).unwrap();
    assert!(manifest.contains("subcommand = validate"));
    assert!(manifest.contains("seed = "));
    assert!(manifest.contains("config_hash = "));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn invalid_preset_parameter_is_validation_error() {
    let dir = scratch_dir("badparam");
    let cfg = write_config(&dir, "preset.c = -1\n");
    let out = wil(&["validate", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&out), 1, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn unknown_config_key_is_usage_error() {
    let dir = scratch_dir("badkey");
    let cfg = write_config(&dir, "presett.kind = constant_boost\n");
    let out = wil(&["validate", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&out), 64, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("presett.kind"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn unconverged_solver_is_numeric_error() {
    let dir = scratch_dir("noconv");
    let cfg = write_config(&dir, "grid.x_n = 50\nsolver.max_iter = 2\n");
    let out =
        wil(&["stationary", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn hazard_table_rows_satisfy_q_equals_p_phi() {
    let dir = scratch_dir("hazard");
    let cfg = write_config(&dir, "preset.kind = power_law\nhazard.x_b = 10\nhazard.rows = 50\n");
    let out =
        wil(&["hazard-table", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.join("hazard_table.csv")).unwrap();
    let mut rows = 0;
    for line in csv.lines().skip(1) {
        let f: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        let (q, p, phi) = (f[2], f[3], f[4]);
        if phi > 1e-12 {
            assert!((q - p * phi).abs() <= 1e-8 * q.max(1e-12), "row {line}");
        }
        rows += 1;
    }
    assert_eq!(rows, 50);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn wil_out_env_var_is_output_fallback() {
    let dir = scratch_dir("envout");
    let out = Command::new(env!("CARGO_BIN_EXE_wil"))
        .args(["validate"])
        .env("WIL_OUT", &dir)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert!(dir.join("assumptions.txt").exists());
    assert!(dir.join("run.manifest").exists());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn compare_subcommand_reports_l1() {
    let dir = scratch_dir("compare");
    let cfg = write_config(
        &dir,
        "sim.n = 200\nsim.horizon = 5\nsim.stamps = 5\ngrid.x_n = 40\ngrid.a_n = 20\n",
    );
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    for out_dir in [&out_a, &out_b] {
        let out = wil(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--seed",
            "9",
        ]);
        assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    // identical runs: distance zero
    let xi_a = out_a.join("xi_0.csv");
    let xi_b = out_b.join("xi_0.csv");
    let out = wil(&["compare", xi_a.to_str().unwrap(), xi_b.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.trim() == "l1 = 0", "stdout: {stdout}");
    // mixed 1d/2d rejected
    let zeta = out_a.join("zeta_0.csv");
    let out = wil(&["compare", xi_a.to_str().unwrap(), zeta.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    // missing file is a usage error
    let out = wil(&["compare", xi_a.to_str().unwrap(), "/nonexistent.csv"]);
    assert_eq!(code(&out), 64);
    // wrong arity
    let out = wil(&["compare", xi_a.to_str().unwrap()]);
    assert_eq!(code(&out), 64);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn reruns_are_byte_identical_outside_manifest() {
    let dir = scratch_dir("rerun");
    let cfg = write_config(
        &dir,
        "sim.n = 500\nsim.horizon = 10\nsim.stamps = 5, 10\ngrid.x_n = 60\ngrid.a_n = 30\n",
    );
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    for out_dir in [&out_a, &out_b] {
        let out = wil(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--seed",
            "3",
        ]);
        assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    let mut names: Vec<String> = std::fs::read_dir(&out_a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(names.iter().filter(|n| n.ends_with(".csv")).count() >= 6);
    for name in &names {
        let a = std::fs::read(out_a.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        if name == "run.manifest" {
            // identical except the isolated timestamp head line
            let tail = |v: &[u8]| {
                let s = String::from_utf8(v.to_vec()).unwrap();
                s.lines().skip(1).collect::<Vec<_>>().join("\n")
            };
            assert_eq!(tail(&a), tail(&b));
        } else {
            assert_eq!(a, b, "file {name} differs between reruns");
        }
    }
    std::fs::remove_dir_all(&dir).ok();
}
