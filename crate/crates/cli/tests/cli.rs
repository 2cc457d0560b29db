use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qudit_qnn::data::synthetic_taiwan;
use tempfile::TempDir;

const SMALL_CONFIG: &str = r#"
seeds = [0, 1]
random_wis_trials = 200

[qnn]
dim = 5
layers = 2

[train]
max_epochs = 3
batch_size = 64

[logreg]
max_epochs = 200

[mlp]
hidden = [8]
max_epochs = 3
"#;

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let ds = synthetic_taiwan(400, 3).unwrap();
        ds.save_csv(&dir.path().join("taiwan.csv")).unwrap();
        fs::write(dir.path().join("small.toml"), SMALL_CONFIG).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_qudit-qnn"))
            .args(args)
            .current_dir(self.dir.path())
            .env_remove("QUDIT_QNN_TAIWAN_CSV")
            .env_remove("QUDIT_QNN_OUT")
            .output()
            .unwrap()
    }

    fn run_ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }
}

fn run_args<'a>(cmd: &'a str, out: &'a str, model: &'a str) -> Vec<&'a str> {
    vec![
        "--out", out, cmd, "--config", "small.toml", "--dataset", "taiwan.csv", "--model", model,
    ]
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn check_algebra_reports_every_dimension() {
    let ws = Workspace::new();
    let stdout = ws.run_ok(&["check-algebra"]);
    for d in 2..=8 {
        assert!(stdout.contains(&format!("d={d}: {} generators", d * d - 1)), "{stdout}");
    }
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn too_small_dimension_rejected() {
    let ws = Workspace::new();
    fs::write(ws.path("d2.toml"), "[qnn]\ndim = 2\n").unwrap();
    let out = ws.run(&["train", "--config", "d2.toml", "--dataset", "taiwan.csv"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("23"), "{err}");
}

#[test]
fn missing_dataset_names_source() {
    let ws = Workspace::new();
    let out = ws.run(&["train", "--config", "small.toml", "--dataset", "absent.csv"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("absent.csv") && err.contains("QUDIT_QNN_TAIWAN_CSV"), "{err}");
}

#[test]
fn convert_dataset_drops_extra_header() {
    let ws = Workspace::new();
    let canonical = read(&ws.path("taiwan.csv"));
    let width = canonical.lines().next().unwrap().split(',').count();
    let codes: Vec<String> = (0..width).map(|i| format!("X{i}")).collect();
    fs::write(ws.path("uci.csv"), format!("{}\n{canonical}", codes.join(","))).unwrap();
    let stdout = ws.run_ok(&["convert-dataset", "uci.csv", "converted.csv"]);
    assert!(stdout.contains("400 rows"), "{stdout}");
    assert_eq!(read(&ws.path("converted.csv")), canonical);
}

#[test]
fn train_evaluate_report_round_trip() {
    let ws = Workspace::new();
    ws.run_ok(&run_args("train", "trained", "qnn"));
    for s in [0, 1] {
        let seed = ws.path(&format!("trained/seed-{s}"));
        for f in ["model.txt", "history.csv", "ranking.csv"] {
            assert!(seed.join(f).is_file(), "missing {f} for seed {s}");
        }
    }
    assert!(ws.path("trained/train_summary.json").is_file());

    let mut eval = run_args("evaluate", "eval", "qnn");
    eval.extend(["--models", "trained"]);
    ws.run_ok(&eval);
    ws.run_ok(&run_args("evaluate", "eval", "logreg"));

    let stdout = ws.run_ok(&[
        "--out",
        "table",
        "report",
        "eval/evaluate_qnn.json",
        "eval/evaluate_logreg.json",
    ]);
    assert!(stdout.contains("qnn") && stdout.contains("logreg"), "{stdout}");
    assert!(stdout.contains("not reproduced"), "{stdout}");
    for f in ["table.txt", "table.json", "table.csv"] {
        assert!(ws.path("table").join(f).is_file(), "missing {f}");
    }
}

#[test]
fn evaluate_is_byte_identical_on_rerun() {
    let ws = Workspace::new();
    let report = ws.path("a/evaluate_qnn.json");
    ws.run_ok(&run_args("evaluate", "a", "qnn"));
    let first = read(&report);
    ws.run_ok(&run_args("evaluate", "a", "qnn"));
    assert_eq!(first, read(&report));
}

#[test]
fn poison_study_writes_report() {
    let ws = Workspace::new();
    let mut args = run_args("poison-study", "p", "logreg");
    args.extend(["--poison-count", "3", "--poison-mode", "test-only"]);
    ws.run_ok(&args);
    let json = read(&ws.path("p/poison_logreg.json"));
    assert!(json.contains("poisoned_features") && json.contains("test-only"), "{json}");
}

#[test]
fn missing_seed_model_exits_with_two() {
    let ws = Workspace::new();
    let mut train = run_args("train", "trained", "logreg");
    train.extend(["--seed-list", "0"]);
    ws.run_ok(&train);
    let mut eval = run_args("evaluate", "eval", "logreg");
    eval.extend(["--models", "trained", "--seed-list", "0,1"]);
    let out = ws.run(&eval);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("failed seeds: [1]"));
    assert!(ws.path("eval/evaluate_logreg.json").is_file());
}
