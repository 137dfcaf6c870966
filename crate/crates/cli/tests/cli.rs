//! End-to-end checks of the command-line contract: exit codes, the stable
//! `RESULT` summary line, bundle contents and determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_acsim")
}

fn tempdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!(
        "acsim-cli-{tag}-{}-{}",
        std::process::id(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap()
            .as_nanos()
    ));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn result_line(output: &Output) -> String {
    let stdout = String::from_utf8_lossy(&output.stdout);
    stdout
        .lines()
        .find(|l| l.starts_with("RESULT "))
        .unwrap_or_else(|| panic!("no RESULT line in {stdout:?}"))
        .to_string()
}

fn assert_result_grammar(line: &str, subcommand: &str, verdict: &str) {
    let parts: Vec<&str> = line.split(' ').collect();
    assert_eq!(parts.len(), 4, "line `{line}`");
    assert_eq!(parts[0], "RESULT");
    assert_eq!(parts[1], subcommand);
    assert_eq!(parts[2], verdict);
    assert!(
        parts[3].chars().all(|c| c.is_ascii_digit()),
        "elapsed_ms must be an integer in `{line}`"
    );
}

#[test]
fn validate_missing_config_names_the_path_and_exits_one() {
    let out = tempdir("missing");
    let output = run(&[
        "validate",
        "--config",
        "definitely-missing.cfg",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("definitely-missing.cfg"),
        "stderr should name the path: {stderr}"
    );
    assert_result_grammar(&result_line(&output), "validate", "fail");
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn figure1_bundle_contains_the_documented_files() {
    let out = tempdir("fig1b");
    let output = run(&[
        "figure1",
        "--set",
        "figure.w=1",
        "--set",
        "grid.n=81,81",
        "--set",
        "grid.dx=0.1,0.1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        output.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    assert_result_grammar(&result_line(&output), "figure1", "pass");
    for file in ["magnitude.pgm", "quiver.csv", "ergomask.pgm", "manifest.txt"] {
        assert!(out.join(file).exists(), "missing {file}");
    }
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn runs_with_equal_seeds_produce_identical_bundles() {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/moving_kink.cfg");
    let hash_of = |tag: &str| {
        let out = tempdir(tag);
        let output = run(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--set",
            "kink.crossings=0.02", // shortened run, same determinism contract
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(
            output.status.code(),
            Some(0),
            "stderr: {}",
            String::from_utf8_lossy(&output.stderr)
        );
        let hash = hash_dir(&out);
        let _ = std::fs::remove_dir_all(&out);
        hash
    };
    assert_eq!(hash_of("det-a"), hash_of("det-b"));
}

#[test]
fn full_uniform_kink_scenario_passes() {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/uniform_kink.cfg");
    let out = tempdir("kink");
    let output = run(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "solver.steps=2000",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        output.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    assert_result_grammar(&result_line(&output), "run", "pass");
    assert!(out.join("timeseries.csv").exists());
    assert!(out.join("manifest.txt").exists());
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn unknown_config_keys_are_a_validation_failure() {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/figure1_w05.cfg");
    let out = tempdir("unknown");
    let output = run(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "figure.not_a_knob=3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("not_a_knob"));
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn occupied_out_dir_requires_force() {
    let out = tempdir("occupied");
    std::fs::write(out.join("existing.txt"), "data").unwrap();
    let output = run(&[
        "fock",
        "--set",
        "fock.alpha=1.0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(1));

    let output = run(&[
        "fock",
        "--set",
        "fock.alpha=1.0",
        "--force",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        output.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    assert!(out.join("cat_amplitudes.csv").exists());
    assert!(out.join("report.txt").exists());
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn validate_subcommand_writes_assumption_report() {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/vortex_metric.cfg");
    let out = tempdir("validate");
    let output = run(&[
        "validate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        output.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let report = std::fs::read_to_string(out.join("assumptions.csv")).unwrap();
    assert!(report.starts_with("check,residual,tolerance,pass"));
    assert!(report.contains("div_v"));
    let _ = std::fs::remove_dir_all(&out);
}

/// FNV-1a over the bundle files, mirroring the library helper.
fn hash_dir(path: &Path) -> u64 {
    let mut names: Vec<_> = std::fs::read_dir(path)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .collect();
    names.sort();
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    for p in names {
        if p.is_file() {
            eat(p.file_name().unwrap().to_string_lossy().as_bytes());
            eat(&std::fs::read(&p).unwrap());
        }
    }
    h
}
