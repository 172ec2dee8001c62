use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 7

[data]
n_authors = 10
qa_per_author = 2
forget_ratio = 0.2

[model]
window = 8
hidden_dim = 16

[finetune]
max_epochs = 3

[unlearn]
epochs = 1

[eval]
max_new_tokens = 4
"#;

fn unlearn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unlearn")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = unlearn(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Corpus and fine-tuned checkpoint in a fresh directory.
fn setup() -> (tempfile::TempDir, PathBuf, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    let ckpt = dir.path().join("base.ckpt");
    ok(&["generate-data", "--config", s(&cfg), "--out", s(&corpus)]);
    ok(&["finetune", "--config", s(&cfg), "--corpus", s(&corpus), "--out", s(&ckpt)]);
    (dir, cfg, corpus, ckpt)
}

#[test]
fn zero_epoch_unlearning_returns_the_input_checkpoint() {
    let (dir, cfg, corpus, ckpt) = setup();
    for opt in ["so", "fo", "iu"] {
        let run = dir.path().join(format!("run-{opt}"));
        ok(&[
            "unlearn",
            "--config",
            s(&cfg),
            "--checkpoint",
            s(&ckpt),
            "--corpus",
            s(&corpus),
            "--epochs",
            "0",
            "--optimizer",
            opt,
            "--out-dir",
            s(&run),
        ]);
        assert_eq!(fs::read(run.join("model.ckpt")).unwrap(), fs::read(&ckpt).unwrap(), "{opt}");
    }
}

#[test]
fn evaluate_is_deterministic() {
    let (_dir, cfg, corpus, ckpt) = setup();
    let args = ["evaluate", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--corpus", s(&corpus)];
    let a = ok(&args).stdout;
    let b = ok(&args).stdout;
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.starts_with("method,seed,epoch,forget_quality,"));
    assert!(text.lines().nth(1).unwrap().starts_with("original,7,0,"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = unlearn(&["evaluate", "--no-such-flag"]);
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert!(!unlearn(&["frobnicate"]).status.success());
}

#[test]
fn missing_checkpoint_is_reported() {
    let (dir, _cfg, corpus, _ckpt) = setup();
    let missing = dir.path().join("nope.ckpt");
    for sub in ["evaluate", "unlearn"] {
        let out = unlearn(&[sub, "--checkpoint", s(&missing), "--corpus", s(&corpus)]);
        assert_eq!(out.status.code(), Some(1));
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains("checkpoint not found"), "{err}");
    }
}

#[test]
fn unlearn_then_report() {
    let (dir, cfg, corpus, ckpt) = setup();
    let run = dir.path().join("so");
    ok(&["unlearn", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--corpus", s(&corpus), "--out-dir", s(&run)]);
    for f in ["config.toml", "model.ckpt", "record.json", "trajectory.tsv", "results.csv", "table.txt"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let plot = fs::read_to_string(run.join("plot_SO-GradDiff-s7.tsv")).unwrap();
    assert_eq!(plot.lines().count(), 3);

    let rows = dir.path().join("rows.csv");
    let eval = ["evaluate", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--corpus", s(&corpus), "--out", s(&rows)];
    ok(&eval);
    ok(&eval);
    assert_eq!(fs::read_to_string(&rows).unwrap().lines().count(), 3);

    let out = dir.path().join("report");
    ok(&["report", s(&run), s(&rows), "--out-dir", s(&out)]);
    let csv = fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.lines().nth(1).unwrap().starts_with("SO-GradDiff,7,1,"));
}

#[test]
fn run_is_reproducible_from_its_config_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["run", "--config", s(&cfg), "--out-dir", s(&a)]);
    let snapshot = a.join("SO-GradDiff-s7").join("config.toml");
    ok(&["run", "--config", s(&snapshot), "--out-dir", s(&b)]);
    let csv = fs::read(a.join("results.csv")).unwrap();
    assert_eq!(csv, fs::read(b.join("results.csv")).unwrap());
    assert_eq!(
        fs::read(a.join("SO-GradDiff-s7/model.ckpt")).unwrap(),
        fs::read(b.join("SO-GradDiff-s7/model.ckpt")).unwrap()
    );
}

#[test]
fn output_root_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_unlearn"))
        .args(["run", "--config", s(&cfg), "--optimizer", "fo"])
        .env("UNLEARN_OUTPUT_DIR", dir.path().join("root"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("root/FO-GradDiff-s7/record.json").exists());
}
