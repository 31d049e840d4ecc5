use std::path::Path;
use std::process::{Command, Output};

use anova_denoise::config::RunConfig;
use anova_denoise::imaging::{add_gaussian_noise, load_image, save_image, ssim, synthetic_scene, NoiseSpec};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_anova-denoise"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_pair(dir: &Path, name: &str, h: usize, w: usize, seed: u64) -> (String, String) {
    let clean = synthetic_scene(h, w);
    let noisy = add_gaussian_noise(&clean, NoiseSpec { stddev: 30.0, seed });
    let c = dir.join(format!("{name}_clean.pgm"));
    let n = dir.join(format!("{name}_noisy.pgm"));
    save_image(&clean, &c).unwrap();
    save_image(&noisy, &n).unwrap();
    (c.display().to_string(), n.display().to_string())
}

#[test]
fn dump_config_round_trips() {
    let out = run(&["spectra", "--sigma", "40", "--lambdas", "1e-3,1e-6", "--dump-config"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg = RunConfig::from_json(&text).unwrap();
    assert_eq!(cfg.kernel.sigma, 40.0);
    assert_eq!(cfg.lambdas, vec![1e-3, 1e-6]);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, &text).unwrap();
    let again = run(&["--config", path.to_str().unwrap(), "--dump-config"]);
    assert_eq!(RunConfig::from_json(&String::from_utf8(again.stdout).unwrap()).unwrap(), cfg);
}

#[test]
fn missing_input_is_an_io_error_naming_the_path() {
    let out = run(&["denoise", "--input", "/nonexistent/noisy.pgm", "--output", "/tmp/x.pgm"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("/nonexistent/noisy.pgm"));
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"kernel": {"sigma": 30, "radius": 1}}"#).unwrap();
    assert_eq!(run(&["--config", path.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(run(&["denoise", "--lambda", "-1"]).status.code(), Some(2));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn fidelity_dominated_denoise_returns_the_input() {
    let dir = tempfile::tempdir().unwrap();
    let (clean, noisy) = write_pair(dir.path(), "a", 14, 16, 1);
    let out_path = dir.path().join("out.pgm");
    let report = dir.path().join("stats.json");
    let out = run(&[
        "denoise", "--input", &noisy, "--clean", &clean, "--output", out_path.to_str().unwrap(),
        "--report", report.to_str().unwrap(), "--mode", "exact", "--lambda", "1e3",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let stats: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(stats["converged"], true);
    let before = load_image(&noisy).unwrap();
    let after = load_image(&out_path).unwrap();
    assert!(ssim(&before, &after).unwrap() >= 0.99);
    assert!(stats["ssim_after"].as_f64().is_some());
}

#[test]
fn non_convergence_exits_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let (_, noisy) = write_pair(dir.path(), "a", 14, 16, 2);
    let out_path = dir.path().join("out.pgm");
    let out = run(&[
        "denoise", "--input", &noisy, "--output", out_path.to_str().unwrap(), "--mode", "exact",
        "--prec", "none", "--lambda", "1e-9", "--maxit", "2", "--report", "/dev/null",
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    assert!(out_path.exists());
}

#[test]
fn bench_csv_header_and_dense_refusal() {
    let out = run(&["bench-op", "--mode", "exact", "--dense-limit", "300", "--sizes", "120,240,480"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "n,setup_ms,apply_ms,total_ms,iters,residual");
    assert_eq!(lines.len(), 4);
    assert!(!lines[1].contains("unavailable"));
    assert!(lines[3].contains("unavailable"));
}

#[test]
fn bench_solve_reports_iterations() {
    let out = run(&["bench-solve", "--mode", "exact", "--sizes", "150", "--lambda", "0.1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row.len(), 6);
    assert!(row[4].parse::<usize>().unwrap() > 0);
    assert!(row[5].parse::<f64>().unwrap() <= 1e-10);
}

#[test]
fn spectra_and_iteration_table_are_reproducible() {
    let args = ["--mode", "exact", "--lambdas", "1e-1,1e-3", "--sigmas", "30"];
    for cmd in ["spectra", "iteration-table"] {
        let mut a = vec![cmd];
        a.extend(args);
        let first = run(&a);
        assert!(first.status.success(), "{}", stderr(&first));
        let second = run(&a);
        assert_eq!(first.stdout, second.stdout, "{cmd}");
    }
    let out = run(&["iteration-table", "--mode", "exact", "--lambdas", "1e-2"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("lambda,prec,iterations,converged,residual"));
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn train_and_validate_from_manifest() {
    let dir = tempfile::tempdir().unwrap();
    write_pair(dir.path(), "t0", 12, 14, 3);
    write_pair(dir.path(), "t1", 13, 12, 4);
    write_pair(dir.path(), "v0", 12, 12, 5);
    let manifest = dir.path().join("manifest.json");
    std::fs::write(
        &manifest,
        r#"{"train": [{"clean": "t0_clean.pgm", "noisy": "t0_noisy.pgm"},
                     {"clean": "t1_clean.pgm", "noisy": "t1_noisy.pgm"}],
            "validation": [{"clean": "v0_clean.pgm", "noisy": "v0_noisy.pgm"}]}"#,
    )
    .unwrap();
    let report = dir.path().join("train.json");
    let csv = dir.path().join("ssim.csv");
    let out = run(&[
        "train", "--manifest", manifest.to_str().unwrap(), "--mode", "exact", "--report",
        report.to_str().unwrap(), "--csv", csv.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let lambda = r["lambda_star"].as_f64().unwrap();
    assert!((1e-9..=3.0).contains(&lambda));
    let ssim_csv = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(ssim_csv.lines().count(), 3);

    let out = run(&[
        "validate", "--manifest", manifest.to_str().unwrap(), "--mode", "exact", "--lambda",
        &lambda.to_string(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["images"].as_array().unwrap().len(), 1);
}

#[test]
fn thread_cap_must_be_positive() {
    let out = bin().args(["--dump-config"]).env("ANOVA_DENOISE_THREADS", "0").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(["--dump-config"]).env("ANOVA_DENOISE_THREADS", "1").output().unwrap();
    assert!(out.status.success());
}
