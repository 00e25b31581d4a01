use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ntc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ntc"))
        .args(args)
        .output()
        .expect("run ntc")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        Workspace {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, text: &str) -> PathBuf {
        let path = self.path(name);
        std::fs::write(&path, text).unwrap();
        path
    }

    /// Small dataset plus a fast training config.
    fn setup(&self) -> (PathBuf, PathBuf, PathBuf) {
        let (data, labels) = (self.path("x.csv"), self.path("y.txt"));
        let out = ntc(&[
            "synth",
            "--clusters",
            "3",
            "--dim",
            "5",
            "--per-cluster",
            "8",
            "--seed",
            "2",
            "--out",
            p(&data),
            "--labels",
            p(&labels),
        ]);
        assert!(out.status.success(), "{out:?}");
        let config = self.write(
            "cfg.json",
            r#"{"m": 8, "c_d": 3, "c_s": 2, "iterations": 4}"#,
        );
        (data, labels, config)
    }
}

#[test]
fn synth_is_deterministic() {
    let ws = Workspace::new();
    let mut files = Vec::new();
    for tag in ["a", "b"] {
        let (x, y) = (
            ws.path(&format!("{tag}.bin")),
            ws.path(&format!("{tag}.txt")),
        );
        assert!(
            ntc(&["synth", "--seed", "7", "--out", p(&x), "--labels", p(&y)])
                .status
                .success()
        );
        files.push((std::fs::read(x).unwrap(), std::fs::read(y).unwrap()));
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn training_twice_gives_identical_models() {
    let ws = Workspace::new();
    let (data, _, config) = ws.setup();
    let models: Vec<Vec<u8>> = ["m1", "m2"]
        .iter()
        .map(|name| {
            let model = ws.path(name);
            let out = ntc(&[
                "train",
                "--data",
                p(&data),
                "--config",
                p(&config),
                "--out-model",
                p(&model),
            ]);
            assert!(out.status.success(), "{out:?}");
            assert!(stdout(&out).contains("final objective"));
            std::fs::read(model).unwrap()
        })
        .collect();
    assert_eq!(models[0], models[1]);
}

#[test]
fn assign_reproduces_training_labels() {
    let ws = Workspace::new();
    let (data, truth, config) = ws.setup();
    let (model, train_labels, labels, repr) = (
        ws.path("m"),
        ws.path("train.txt"),
        ws.path("assign.txt"),
        ws.path("r.csv"),
    );
    let out = ntc(&[
        "train",
        "--data",
        p(&data),
        "--config",
        p(&config),
        "--out-model",
        p(&model),
        "--out-labels",
        p(&train_labels),
        "--truth",
        p(&truth),
        "--runs",
        "2",
    ]);
    assert!(out.status.success(), "{out:?}");
    assert!(stdout(&out).contains("CA="));
    let out = ntc(&[
        "assign",
        "--model",
        p(&model),
        "--data",
        p(&data),
        "--out-labels",
        p(&labels),
        "--out-repr",
        p(&repr),
    ]);
    assert!(out.status.success(), "{out:?}");
    assert_eq!(
        std::fs::read(&train_labels).unwrap(),
        std::fs::read(&labels).unwrap()
    );
    let rows = std::fs::read_to_string(&repr).unwrap();
    assert_eq!(rows.lines().count(), 24);
    assert!(rows.lines().all(|l| l.split(',').count() == 8));
}

#[test]
fn identity_training_inspects_as_identity() {
    let ws = Workspace::new();
    let (data, _, config) = ws.setup();
    let model = ws.path("m");
    let out = ntc(&[
        "train",
        "--data",
        p(&data),
        "--config",
        p(&config),
        "--out-model",
        p(&model),
        "--identity",
    ]);
    assert!(out.status.success(), "{out:?}");
    let text = stdout(&ntc(&["inspect", "--model", p(&model)]));
    for line in [
        "M=5",
        "N=5",
        "C_d=3",
        "C_s=2",
        "identity=true",
        "kappa=1.000000",
        "mu=0.000000",
    ] {
        assert!(text.lines().any(|l| l == line), "missing {line} in {text}");
    }
}

#[test]
fn eval_reports_accuracy_and_nmi() {
    let ws = Workspace::new();
    let truth = ws.write("t.txt", "1\n1\n2\n2\n");
    let swapped = ws.write("s.txt", "2\n2\n1\n1\n");
    let mixed = ws.write("m.txt", "1\n2\n1\n2\n");
    assert_eq!(
        stdout(&ntc(&["eval", "--pred", p(&swapped), "--truth", p(&truth)])).trim(),
        "CA=1.0000 NMI=1.0000"
    );
    assert_eq!(
        stdout(&ntc(&["eval", "--pred", p(&mixed), "--truth", p(&truth)])).trim(),
        "CA=0.5000 NMI=0.0000"
    );
}

#[test]
fn knn_on_its_own_training_set_is_exact() {
    let ws = Workspace::new();
    let repr = ws.write("r.csv", "0,0\n0,1\n5,5\n6,5\n");
    let labels = ws.write("l.txt", "1\n1\n2\n2\n");
    let args = [
        "knn",
        "--train-repr",
        p(&repr),
        "--train-labels",
        p(&labels),
        "--test-repr",
        p(&repr),
        "--test-labels",
        p(&labels),
    ];
    assert_eq!(stdout(&ntc(&args)).trim(), "accuracy=1.0000");
    let mut too_many = args.to_vec();
    too_many.extend(["--k", "9"]);
    assert_eq!(ntc(&too_many).status.code(), Some(1));
}

#[test]
fn error_exit_codes() {
    let ws = Workspace::new();
    let three = ws.write("a.txt", "1\n2\n3\n");
    let two = ws.write("b.txt", "1\n2\n");
    assert_eq!(
        ntc(&["eval", "--pred", p(&three), "--truth", p(&two)])
            .status
            .code(),
        Some(2)
    );
    let corrupt = ws.write("bad.ntm", "not a model");
    let out = ntc(&["inspect", "--model", p(&corrupt)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    assert_eq!(ntc(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(ntc(&[]).status.code(), Some(1));
    assert_eq!(ntc(&["--help"]).status.code(), Some(0));
    let bad_config = ws.write("c.json", r#"{"lambda9": 1}"#);
    let data = ws.write("x.csv", "1,2\n3,4\n");
    let out = ntc(&[
        "train",
        "--data",
        p(&data),
        "--config",
        p(&bad_config),
        "--out-model",
        p(&ws.path("m")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}
