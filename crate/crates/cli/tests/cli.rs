use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"{
  "equation": "kdv",
  "t_final": 0.5,
  "n_high": 6,
  "n_low": 12,
  "n_test": 3,
  "seeds": [1, 2, 3, 4, 5],
  "data_dir": "data",
  "training": {"epochs": {"don_pretrain": 2, "lstm_only": 2, "joint_finetune": 2}, "n_freq": 1}
}"#;

fn operon(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_operon"))
        .args(args)
        .current_dir(dir)
        .env("OPERON_THREADS", "1")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("exp.json"), config).unwrap();
    dir
}

#[test]
fn generate_is_deterministic_and_prints_checksums() {
    let dir = setup(TINY);
    let a = operon(dir.path(), &["generate", "--config", "exp.json", "--desk", "--seed", "3", "--out", "a"]);
    let b = operon(dir.path(), &["generate", "--config", "exp.json", "--desk", "--seed", "3", "--out", "b"]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(code(&b), 0, "{}", stderr(&b));
    assert_eq!(stdout(&a).lines().count(), 3);
    let sums = |s: String| s.lines().map(|l| l.split_whitespace().last().unwrap().to_string()).collect::<Vec<_>>();
    assert_eq!(sums(stdout(&a)), sums(stdout(&b)));
    for name in ["high.bin", "low.bin", "test.bin", "manifest.json"] {
        let x = std::fs::read(dir.path().join("a").join(name)).unwrap();
        let y = std::fs::read(dir.path().join("b").join(name)).unwrap();
        assert!(x == y, "{name} differs");
    }
}

#[test]
fn train_then_evaluate_reports_one_row_per_seed() {
    let dir = setup(TINY);
    let g = operon(dir.path(), &["generate", "--config", "exp.json", "--desk"]);
    assert_eq!(code(&g), 0, "{}", stderr(&g));
    let t = operon(dir.path(), &["train", "--config", "exp.json", "--desk", "--variant", "donlstm_multi"]);
    assert_eq!(code(&t), 0, "{}", stderr(&t));
    assert_eq!(stdout(&t).lines().count(), 5);
    let e = operon(dir.path(), &["evaluate", "--config", "exp.json", "--desk", "--variant", "donlstm_multi"]);
    assert_eq!(code(&e), 0, "{}", stderr(&e));
    let summary = stdout(&e);
    let mut lines = summary.lines();
    assert_eq!(lines.next(), Some("model,runs,mae,rmse,rse"));
    assert!(lines.next().unwrap().starts_with("donlstm_multi,5,"), "{summary}");
    let csv = std::fs::read_to_string(dir.path().join("runs/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.starts_with("model,resolution,seed,N_H,N_L,mae,rmse,rse"));
}

#[test]
fn training_twice_gives_identical_files() {
    let dir = setup(TINY);
    assert_eq!(code(&operon(dir.path(), &["generate", "--config", "exp.json", "--desk"])), 0);
    for out in ["r1", "r2"] {
        let t = operon(
            dir.path(),
            &["train", "--config", "exp.json", "--desk", "--seed", "7", "--variant", "don_multi", "--out", out],
        );
        assert_eq!(code(&t), 0, "{}", stderr(&t));
    }
    for name in ["don_multi_seed7.model.json", "don_multi_seed7.log.csv"] {
        let x = std::fs::read(dir.path().join("r1").join(name)).unwrap();
        let y = std::fs::read(dir.path().join("r2").join(name)).unwrap();
        assert!(x == y, "{name} differs");
    }
}

#[test]
fn unknown_variant_exits_with_config_code() {
    let dir = setup(TINY);
    let out = operon(dir.path(), &["train", "--config", "exp.json", "--variant", "don_medium"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("donlstm_multi"), "{}", stderr(&out));
}

#[test]
fn malformed_config_exits_with_config_code() {
    let dir = setup(r#"{"equation":"kdv","training":{"lr1":1e-5,"lr2":1e-4}}"#);
    assert_eq!(code(&operon(dir.path(), &["generate", "--config", "exp.json", "--desk"])), 2);
    let dir = setup("{not json");
    assert_eq!(code(&operon(dir.path(), &["generate", "--config", "exp.json"])), 2);
}

#[test]
fn missing_files_exit_with_io_code() {
    let dir = setup(TINY);
    assert_eq!(code(&operon(dir.path(), &["generate", "--config", "nope.json"])), 4);
    let out = operon(dir.path(), &["train", "--config", "exp.json", "--desk", "--variant", "don_low", "--seed", "1"]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    let out = operon(dir.path(), &["evaluate", "--config", "exp.json", "--desk", "--variant", "don_low", "--seed", "1"]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn newton_failure_exits_with_numeric_code() {
    let dir = setup(
        r#"{"equation":"kdv","coefficients":{"kind":"kdv","gamma":1,"eta":6000},
            "n_high":2,"n_low":2,"n_test":1,
            "integrator":{"substeps":1,"tolerance":1e-10,"max_iterations":3}}"#,
    );
    let out = operon(dir.path(), &["generate", "--config", "exp.json", "--desk"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("newton"));
}
