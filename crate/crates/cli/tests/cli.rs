use serde_json::Value;
use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

fn depa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_depa"))
        .args(args)
        .env_remove("DEPA_LM_ENDPOINT")
        .env_remove("DEPA_LM_MODEL")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = depa(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn code(args: &[&str]) -> i32 {
    depa(args).status.code().expect("exited normally")
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    /// Synthetic corpus, model trained on it, and a poisoned copy of a
    /// second corpus.
    fn new() -> Self {
        let ws = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        ok(&["synth", "--n", "200", "--seed", "0", "--out", &ws.s("train.jsonl")]);
        ok(&["synth", "--n", "60", "--seed", "1", "--out", &ws.s("clean.jsonl")]);
        ok(&[
            "train-lm",
            "--corpus",
            &ws.s("train.jsonl"),
            "--out",
            &ws.s("model.json"),
        ]);
        ok(&[
            "poison",
            "--input",
            &ws.s("clean.jsonl"),
            "--out",
            &ws.s("poisoned.jsonl"),
            "--family",
            "fixed1",
            "--rate",
            "0.2",
            "--seed",
            "3",
        ]);
        ws
    }

    fn p(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.p(name).to_string_lossy().into_owned()
    }

    fn detect(&self, out: &str, extra: &[&str]) {
        let input = self.s("poisoned.jsonl");
        let model = self.s("model.json");
        let out = self.s(out);
        let mut args = vec!["detect", "--input", &input, "--model", &model, "--out", &out];
        args.extend(extra);
        ok(&args);
    }
}

fn lines(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn detect_finds_poisoned_tasks() {
    let ws = Workspace::new();
    ws.detect("reports.jsonl", &["--detector", "depa", "--T", "1.5"]);
    let reports = lines(&ws.p("reports.jsonl"));
    assert_eq!(reports.len(), 60);
    assert!(reports.iter().any(|r| r["verdict"] == true));
    assert!(reports.iter().all(|r| r["elapsed_ms"] == 0.0));
    assert!(ws.p("reports.jsonl.manifest.json").exists());
}

#[test]
fn detect_leaves_its_input_alone() {
    let ws = Workspace::new();
    let before = fs::read(ws.p("poisoned.jsonl")).unwrap();
    ws.detect("reports.jsonl", &[]);
    assert_eq!(fs::read(ws.p("poisoned.jsonl")).unwrap(), before);
}

#[test]
fn every_stage_is_byte_reproducible() {
    let ws = Workspace::new();
    ok(&[
        "poison",
        "--input",
        &ws.s("clean.jsonl"),
        "--out",
        &ws.s("again.jsonl"),
        "--family",
        "fixed1",
        "--rate",
        "0.2",
        "--seed",
        "3",
    ]);
    assert_eq!(
        fs::read(ws.p("poisoned.jsonl")).unwrap(),
        fs::read(ws.p("again.jsonl")).unwrap()
    );
    ws.detect("a.jsonl", &[]);
    ws.detect("b.jsonl", &["--sequential"]);
    assert_eq!(fs::read(ws.p("a.jsonl")).unwrap(), fs::read(ws.p("b.jsonl")).unwrap());
    // manifests differ only in the output path and execution mode
    let manifest = |name: &str| {
        let mut m: Value = serde_json::from_slice(&fs::read(ws.p(name)).unwrap()).unwrap();
        m["outputs"][0]["path"] = Value::Null;
        m["config"]["run"]["execution"] = Value::Null;
        m
    };
    assert_eq!(manifest("a.jsonl.manifest.json"), manifest("b.jsonl.manifest.json"));
}

#[test]
fn eval_of_perfect_reports_scores_one() {
    let ws = Workspace::new();
    let perfect: Vec<String> = lines(&ws.p("poisoned.jsonl"))
        .iter()
        .map(|t| {
            let poisoned = t["poisoned"] == true;
            serde_json::json!({
                "task_id": t["id"],
                "verdict": poisoned,
                "flagged_lines": if poisoned { t["injected_lines"].clone() } else { serde_json::json!([]) },
                "task_score": if poisoned { 1.0 } else { 0.0 },
                "elapsed_ms": 0.0,
            })
            .to_string()
        })
        .collect();
    fs::write(ws.p("perfect.jsonl"), perfect.join("\n") + "\n").unwrap();
    ok(&[
        "eval",
        "--input",
        &ws.s("poisoned.jsonl"),
        "--reports",
        &ws.s("perfect.jsonl"),
        "--out",
        &ws.s("eval.json"),
        "--roc",
        &ws.s("roc.csv"),
    ]);
    let summary: Value = serde_json::from_slice(&fs::read(ws.p("eval.json")).unwrap()).unwrap();
    assert_eq!(summary["f1"], 1.0);
    assert_eq!(summary["auroc"], 1.0);
    assert_eq!(summary["localization"]["precision"], 1.0);
    assert!(fs::read_to_string(ws.p("roc.csv"))
        .unwrap()
        .starts_with("threshold,fpr,tpr"));
}

#[test]
fn sweep_cleanse_and_ga_run_end_to_end() {
    let ws = Workspace::new();
    ok(&[
        "sweep",
        "--input",
        &ws.s("poisoned.jsonl"),
        "--model",
        &ws.s("model.json"),
        "--out",
        &ws.s("sweep.csv"),
    ]);
    assert_eq!(fs::read_to_string(ws.p("sweep.csv")).unwrap().lines().count(), 27);
    ws.detect("reports.jsonl", &[]);
    ok(&[
        "cleanse",
        "--input",
        &ws.s("poisoned.jsonl"),
        "--reports",
        &ws.s("reports.jsonl"),
        "--mode",
        "strip-lines",
        "--out",
        &ws.s("cleansed.jsonl"),
    ]);
    assert_eq!(lines(&ws.p("cleansed.jsonl")).len(), 60);
    ok(&[
        "ga-attack",
        "--input",
        &ws.s("clean.jsonl"),
        "--model",
        &ws.s("model.json"),
        "--population",
        "10",
        "--iterations",
        "2",
        "--out",
        &ws.s("trigger.json"),
        "--trace",
        &ws.s("trace.csv"),
    ]);
    let trigger: Value = serde_json::from_slice(&fs::read(ws.p("trigger.json")).unwrap()).unwrap();
    assert!(trigger.to_string().contains("payload"));
    assert_eq!(fs::read_to_string(ws.p("trace.csv")).unwrap().lines().count(), 4);
}

#[test]
fn malformed_input_exits_2() {
    let ws = Workspace::new();
    fs::write(ws.p("bad.jsonl"), "{\"code\": \n").unwrap();
    assert_eq!(
        code(&[
            "detect",
            "--input",
            &ws.s("bad.jsonl"),
            "--model",
            &ws.s("model.json"),
            "--out",
            &ws.s("r.jsonl")
        ]),
        2
    );
    assert_eq!(
        code(&[
            "detect",
            "--input",
            &ws.s("missing.jsonl"),
            "--model",
            &ws.s("model.json"),
            "--out",
            &ws.s("r.jsonl")
        ]),
        2
    );
}

#[test]
fn unreachable_backend_exits_3() {
    let ws = Workspace::new();
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let endpoint = format!("http://127.0.0.1:{port}/v1/completions");
    let status = code(&[
        "detect",
        "--input",
        &ws.s("poisoned.jsonl"),
        "--endpoint",
        &endpoint,
        "--lm-model",
        "m",
        "--timeout-secs",
        "2",
        "--out",
        &ws.s("r.jsonl"),
    ]);
    assert_eq!(status, 3);
}

#[test]
fn conflicting_configuration_exits_4() {
    let ws = Workspace::new();
    let input = ws.s("poisoned.jsonl");
    let model = ws.s("model.json");
    let out = ws.s("r.jsonl");
    let base = ["detect", "--input", &input, "--out", &out];
    let with = |extra: &[&str]| {
        let mut v = base.to_vec();
        v.extend(extra);
        code(&v)
    };
    assert_eq!(
        with(&["--model", &model, "--endpoint", "http://x", "--lm-model", "m"]),
        4
    );
    assert_eq!(with(&["--model", &model, "--T", "-1"]), 4);
    assert_eq!(
        with(&["--model", &model, "--detector", "depa", "--tokenizer", "code-lexer"]),
        4
    );
    assert_eq!(with(&["--model", &model, "--workers", "4", "--sequential"]), 4);
    assert_eq!(with(&[]), 4);
}
