use std::path::{Path, PathBuf};
use std::process::Command;

use pairmask::cli::{read_reports, run};
use pairmask::datagen::read_jsonl;
use pairmask::models::ClassifierParams;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ok(args: &[&str]) {
    let mut argv = vec!["pairmask"];
    argv.extend_from_slice(args);
    assert_eq!(run(argv), 0, "{args:?}");
}

fn code(args: &[&str]) -> i32 {
    let mut argv = vec!["pairmask"];
    argv.extend_from_slice(args);
    run(argv)
}

/// Small task, trained model and gmask/random reports in a temp dir.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let data = root.join("data");
        ok(&[
            "gen-data", "--out", s(&data), "--train-size", "600", "--dev-size", "100", "--test-size", "40",
            "--seed", "3",
        ]);
        ok(&[
            "train-model",
            "--data",
            s(&data.join("train.jsonl")),
            "--dev",
            s(&data.join("dev.jsonl")),
            "--out",
            s(&root.join("model.json")),
            "--seed",
            "3",
        ]);
        for method in ["gmask", "random"] {
            ok(&[
                "explain",
                "--model",
                s(&root.join("model.json")),
                "--data",
                s(&data.join("test.jsonl")),
                "--method",
                method,
                "--limit",
                "12",
                "--epochs",
                "20",
                "--out",
                s(&root.join(format!("{method}.jsonl"))),
            ]);
        }
        Fixture { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

#[test]
fn stages_chain_and_echo_their_config() {
    let f = Fixture::new();
    for name in ["data/train.jsonl", "data/dev.jsonl", "data/test.jsonl", "data/task.json"] {
        assert!(f.path(name).exists(), "{name}");
    }
    assert_eq!(read_jsonl(&f.path("data/train.jsonl")).unwrap().len(), 600);
    ClassifierParams::load(&f.path("model.json")).unwrap();
    let reports = read_reports(&f.path("gmask.jsonl")).unwrap();
    assert_eq!(reports.len(), 12);
    assert!(reports.iter().enumerate().all(|(i, r)| r.id == i));

    let gen = std::fs::read_to_string(f.path("data/gen-data.config")).unwrap();
    assert!(gen.lines().any(|l| l == "train-size = 600"), "{gen}");
    assert!(gen.lines().any(|l| l == "seed = 3"), "{gen}");
    assert!(gen.lines().any(|l| l == "vocab-size = 200"), "{gen}");
    assert!(f.path("model.json.config").exists());
    assert!(f.path("gmask.jsonl.config").exists());

    let out = f.path("eval.json");
    ok(&[
        "evaluate",
        "--model",
        s(&f.path("model.json")),
        "--data",
        s(&f.path("data/test.jsonl")),
        "--reports",
        &format!("{},{}", s(&f.path("gmask.jsonl")), s(&f.path("random.jsonl"))),
        "--out",
        s(&out),
    ]);
    let eval: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    for method in ["gmask", "random"] {
        let m = &eval["methods"][method];
        assert_eq!(m["examples"], 12);
        for key in ["aopc", "posthoc", "degradation", "recovery"] {
            assert!(!m[key].is_null(), "{method} lacks {key}");
        }
    }
    assert!(eval["grids"].is_object());

    let html = f.path("gmask.html");
    ok(&[
        "render",
        "--data",
        s(&f.path("data/test.jsonl")),
        "--reports",
        s(&f.path("gmask.jsonl")),
        "--limit",
        "5",
        "--out",
        s(&html),
    ]);
    let doc = std::fs::read_to_string(&html).unwrap();
    assert!(doc.starts_with("<!DOCTYPE html>") && !doc.contains("<script"));
    assert_eq!(doc.matches("<hr>").count(), 4);
    let ansi = f.path("gmask.txt");
    ok(&[
        "render",
        "--data",
        s(&f.path("data/test.jsonl")),
        "--reports",
        s(&f.path("gmask.jsonl")),
        "--format",
        "ansi",
        "--out",
        s(&ansi),
    ]);
    assert!(std::fs::read_to_string(&ansi).unwrap().contains("\x1b[48;5;"));
}

#[test]
fn evaluate_names_the_first_mismatched_id() {
    let f = Fixture::new();
    let other = f.path("other");
    ok(&[
        "gen-data", "--out", s(&other), "--train-size", "10", "--dev-size", "10", "--test-size", "40", "--seed",
        "99",
    ]);
    let status = code(&[
        "evaluate",
        "--model",
        s(&f.path("model.json")),
        "--data",
        s(&other.join("test.jsonl")),
        "--reports",
        s(&f.path("random.jsonl")),
        "--out",
        s(&f.path("bad.json")),
    ]);
    assert_eq!(status, 1);
    assert!(!f.path("bad.json").exists());

    // a single swapped example is reported by its id
    let mut test = read_jsonl(&f.path("data/test.jsonl")).unwrap();
    test.swap(4, 5);
    let swapped = f.path("swapped.jsonl");
    pairmask::datagen::write_jsonl(&swapped, &test).unwrap();
    let output = Command::new(env!("CARGO_BIN_EXE_pairmask"))
        .args([
            "evaluate",
            "--model",
            s(&f.path("model.json")),
            "--data",
            s(&swapped),
            "--reports",
            s(&f.path("random.jsonl")),
            "--out",
            s(&f.path("bad.json")),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("report id 4"), "{stderr}");
    assert!(output.stdout.is_empty());
}

#[test]
fn usage_errors_exit_with_one() {
    let bin = env!("CARGO_BIN_EXE_pairmask");
    let out = Command::new(bin).args(["gen-data", "--out", "x", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--bogus") && stderr.contains("Usage"), "{stderr}");

    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["render", "--data", "a", "--reports", "b", "--out", "c", "--format", "pdf"]), 1);
    assert_eq!(code(&["explain", "--model", "nope.json", "--data", "nope.jsonl", "--out", "x"]), 1);
    assert_eq!(Command::new(bin).arg("--help").output().unwrap().status.code(), Some(0));
    assert_eq!(Command::new(bin).arg("--version").output().unwrap().status.code(), Some(0));
}

#[test]
fn config_file_presets_flags_and_command_line_wins() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# preset\ntrain-size = 30\ndev-size = 5\ntest-size = 7\nseed = 11\n").unwrap();
    let out = dir.path().join("d");
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&out), "--test-size", "9"]);
    assert_eq!(read_jsonl(&out.join("train.jsonl")).unwrap().len(), 30);
    assert_eq!(read_jsonl(&out.join("test.jsonl")).unwrap().len(), 9);
    let echoed = std::fs::read_to_string(out.join("gen-data.config")).unwrap();
    assert!(echoed.lines().any(|l| l == "seed = 11"));
    assert!(echoed.lines().any(|l| l == "test-size = 9"));

    // the echoed config reproduces the run
    let again = dir.path().join("e");
    ok(&["gen-data", "--config", s(&out.join("gen-data.config")), "--out", s(&again)]);
    for name in ["train.jsonl", "dev.jsonl", "test.jsonl"] {
        assert_eq!(std::fs::read(out.join(name)).unwrap(), std::fs::read(again.join(name)).unwrap());
    }

    std::fs::write(&cfg, "no equals sign here\n").unwrap();
    assert_eq!(code(&["gen-data", "--config", s(&cfg), "--out", s(&out)]), 1);
    std::fs::write(&cfg, "unknown-flag = 3\n").unwrap();
    assert_eq!(code(&["gen-data", "--config", s(&cfg), "--out", s(&out)]), 1);
}

#[test]
fn seed_falls_back_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let gen = |name: &str, env: Option<&str>, flag: Option<&str>| {
        let out = dir.path().join(name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_pairmask"));
        cmd.args(["gen-data", "--train-size", "20", "--dev-size", "5", "--test-size", "5", "--out", s(&out)]);
        cmd.env_remove("PAIRMASK_SEED");
        if let Some(v) = env {
            cmd.env("PAIRMASK_SEED", v);
        }
        if let Some(v) = flag {
            cmd.args(["--seed", v]);
        }
        assert!(cmd.status().unwrap().success());
        std::fs::read(out.join("train.jsonl")).unwrap()
    };
    let env5 = gen("a", Some("5"), None);
    assert_eq!(env5, gen("b", None, Some("5")));
    assert_ne!(env5, gen("c", None, None));
    // the flag overrides the environment
    assert_eq!(gen("d", Some("5"), Some("6")), gen("e", None, Some("6")));
}

#[test]
fn non_finite_model_output_exits_with_two() {
    let f = Fixture::new();
    let mut doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(f.path("model.json")).unwrap()).unwrap();
    for w in doc["weights"]["embedding"]["data"].as_array_mut().unwrap() {
        *w = serde_json::json!(1e300);
    }
    let broken = f.path("broken.json");
    std::fs::write(&broken, doc.to_string()).unwrap();
    let status = code(&[
        "explain",
        "--model",
        s(&broken),
        "--data",
        s(&f.path("data/test.jsonl")),
        "--method",
        "loo",
        "--limit",
        "2",
        "--out",
        s(&f.path("nan.jsonl")),
    ]);
    assert_eq!(status, 2);
}

#[test]
fn worker_count_does_not_change_reports() {
    let f = Fixture::new();
    let mut outputs = Vec::new();
    for workers in ["1", "3"] {
        let out = f.path(&format!("w{workers}.jsonl"));
        ok(&[
            "explain",
            "--model",
            s(&f.path("model.json")),
            "--data",
            s(&f.path("data/test.jsonl")),
            "--method",
            "imask",
            "--limit",
            "8",
            "--epochs",
            "10",
            "--workers",
            workers,
            "--out",
            s(&out),
        ]);
        outputs.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn inputs_are_left_untouched() {
    let f = Fixture::new();
    let before: Vec<Vec<u8>> = ["data/test.jsonl", "model.json", "gmask.jsonl"]
        .iter()
        .map(|n| std::fs::read(f.path(n)).unwrap())
        .collect();
    ok(&[
        "evaluate",
        "--model",
        s(&f.path("model.json")),
        "--data",
        s(&f.path("data/test.jsonl")),
        "--reports",
        s(&f.path("gmask.jsonl")),
        "--metrics",
        "aopc",
        "--out",
        s(&f.path("e.json")),
    ]);
    let after: Vec<Vec<u8>> = ["data/test.jsonl", "model.json", "gmask.jsonl"]
        .iter()
        .map(|n| std::fs::read(f.path(n)).unwrap())
        .collect();
    assert_eq!(before, after);
}
