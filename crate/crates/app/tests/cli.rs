use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn signms(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_signms"))
        .args(args)
        .env("SIGNMS_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("signms-cli-{}-{tag}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const SMALL: &str = "experiment = flat_interface\nn_fine = 24\nn_coarse = [4, 6]\nm = [1, 2]\nk = 4\n";

#[test]
fn run_writes_tables_and_resolved_config() {
    let dir = scratch("run");
    let cfg = write(&dir, "small.cfg", SMALL);
    let out = dir.join("out");
    let o = signms(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--dump-fields",
        "--set",
        "k=3.5",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("errors.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",ok")));
    assert!(csv.contains(",3.500e+00,"));
    let resolved = std::fs::read_to_string(out.join("config.resolved")).unwrap();
    let k_line = resolved.lines().find(|l| l.starts_with("k ")).unwrap();
    assert!(k_line.contains("3.5") && k_line.contains("flag"), "{k_line}");
    assert!(out.join("timings.csv").exists());
    assert!(out.join("u_ref.grid").exists());
    assert!(out.join("u_ms_H6_m2.grid").exists());
    assert!(out.join("abs_diff_H4_m1.grid").exists());
    assert!(!out.join("failures.txt").exists());
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn resolved_config_reproduces_run() {
    let dir = scratch("replay");
    let cfg = write(&dir, "small.cfg", SMALL);
    let a = dir.join("a");
    let b = dir.join("b");
    assert!(signms(&["run", "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()]).status.success());
    let replay = a.join("config.resolved");
    assert!(signms(&[
        "run",
        "--config",
        replay.to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
        "--parallel"
    ])
    .status
    .success());
    assert_eq!(
        std::fs::read(a.join("errors.csv")).unwrap(),
        std::fs::read(b.join("errors.csv")).unwrap()
    );
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn bad_config_is_rejected_before_solving() {
    let dir = scratch("bad");
    let cfg = write(&dir, "bad.cfg", "n_fine = 400\nn_coarse = [3]\n");
    let out = dir.join("out");
    let o = signms(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("n_coarse=3") && err.contains("400"), "{err}");
    assert!(!out.exists());

    let cfg = write(&dir, "typo.cfg", "n_fnie = 40\nkk = 2\n");
    let o = signms(&["run", "--config", cfg.to_str().unwrap()]);
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(o.status.code(), Some(2));
    assert!(err.contains("n_fnie") && err.contains("kk"), "{err}");
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn failed_rows_give_nonzero_exit() {
    let dir = scratch("fail");
    let cfg = write(
        &dir,
        "custom.cfg",
        "experiment = custom\nn_fine = 12\nn_coarse = [3]\nm = [1]\nsigma_path = /nonexistent/s.grid\nsource_path = /nonexistent/f.grid\n",
    );
    let out = dir.join("out");
    let o = signms(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(std::fs::read_to_string(out.join("errors.csv")).unwrap().contains(",failed"));
    assert!(std::fs::read_to_string(out.join("failures.txt")).unwrap().contains("m=1"));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn verify_passes() {
    let o = signms(&["verify"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.lines().count() >= 5);
    assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
}
