use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ifthen_core::corpus::{write_dataset, Example};
use ifthen_core::synthetic::{generate, SyntheticSpec};
use ifthen_core::{EvalReport, Recipe};

fn ifthen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ifthen"))
        .args(args)
        .env_remove("IFTHEN_CONFIG")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn corpus(size: usize) -> Vec<Example> {
    generate(SyntheticSpec {
        size,
        paraphrase: false,
        seed: 3,
    })
}

fn short_title() -> Example {
    Example {
        id: "short".into(),
        title: "post tweet".into(),
        description: None,
        recipe: Recipe::new("a", "b", "c", "d").unwrap(),
        annotations: None,
    }
}

/// Writes a dataset file into `dir` and returns its path.
fn dataset(dir: &Path, name: &str, examples: &[Example]) -> PathBuf {
    let path = dir.join(name);
    write_dataset(&path, examples).unwrap();
    path
}

fn prepare(input: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["prepare", "--input", p(input), "--output", p(out)];
    args.extend_from_slice(extra);
    ifthen(&args)
}

const TINY_LSTM: &str = r#"
[model]
family = "lstm"
embedding_size = 16
hidden_size = 48
max_source_len = 20

[train]
epochs = 200
batch_size = 4
base_lr = 0.005
"#;

#[test]
fn prepare_writes_every_artifact_and_counts_removals() {
    let dir = tempfile::tempdir().unwrap();
    let mut examples = corpus(40);
    examples.push(short_title());
    let input = dataset(dir.path(), "all.jsonl", &examples);
    let out = dir.path().join("data");
    let o = prepare(&input, &out, &["--valid-count", "8", "--test-count", "4", "--seed", "5"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["train.jsonl", "valid.jsonl", "test.jsonl", "src_vocab.txt", "tgt_vocab.txt", "clean_report.json", "manifest.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let lines = |f: &str| fs::read_to_string(out.join(f)).unwrap().lines().count();
    assert_eq!((lines("train.jsonl"), lines("valid.jsonl"), lines("test.jsonl")), (28, 8, 4));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("clean_report.json")).unwrap()).unwrap();
    assert_eq!(report["train"]["original"], 41);
    assert_eq!(report["train"]["by_filter"]["short_title"]["removed"], 1);
    assert_eq!(report["train"]["final"], 40);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "prepare");
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["inputs"].as_object().unwrap().len(), 1);
    assert_eq!(manifest["outputs"].as_object().unwrap().len(), 6);
}

#[test]
fn prepare_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let input = dataset(dir.path(), "all.jsonl", &corpus(50));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(code(&prepare(&input, out, &["--valid-count", "10", "--seed", "9"])), 0);
    }
    for f in ["train.jsonl", "valid.jsonl", "test.jsonl", "src_vocab.txt", "tgt_vocab.txt", "clean_report.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn prepare_error_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.jsonl");
    assert_eq!(code(&prepare(&missing, &dir.path().join("o"), &[])), 1);
    let input = dataset(dir.path(), "all.jsonl", &corpus(5));
    assert_eq!(code(&prepare(&input, &dir.path().join("o"), &["--valid-count", "5"])), 2);
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"id\": 1}\n").unwrap();
    assert_eq!(code(&prepare(&bad, &dir.path().join("o"), &[])), 2);
    assert_eq!(code(&prepare(&bad, &dir.path().join("o2"), &["--lenient"])), 2);
    let mixed = dir.path().join("mixed.jsonl");
    let good = fs::read_to_string(&input).unwrap();
    fs::write(&mixed, format!("{good}{{\"id\": 1}}\n")).unwrap();
    let o = prepare(&mixed, &dir.path().join("o3"), &["--lenient", "--valid-count", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(dir.path().join("o3/clean_report.json")).unwrap();
    assert!(report.contains("\"skipped_lines\": 1"), "{report}");
}

#[test]
fn test_file_gets_the_agreement_filter() {
    let dir = tempfile::tempdir().unwrap();
    let input = dataset(dir.path(), "train.jsonl", &corpus(20));
    let mut test = corpus(3);
    let gold = test[0].recipe.clone();
    let other = test[1].recipe.clone();
    test[0].annotations = Some(vec![gold.clone(), gold.clone(), gold, other.clone()]);
    test[1].annotations = Some(vec![other.clone(), test[0].recipe.clone()]);
    let test_path = dataset(dir.path(), "test_in.jsonl", &test);
    let out = dir.path().join("data");
    let o = prepare(&input, &out, &["--test", p(&test_path), "--min-agreement", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("clean_report.json")).unwrap()).unwrap();
    assert_eq!(report["test"]["final"], 1);
    assert_eq!(report["test"]["by_filter"]["low_agreement"]["removed"], 1);
    assert_eq!(report["test"]["by_filter"]["missing_annotations"]["removed"], 1);
}

#[test]
fn train_dry_run_echoes_family_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = ifthen(&["train", "--arch", "transformer", "--data", "nowhere", "--out", p(&out), "--dry-run"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    for line in ["layers = 6", "heads = 8", "feed_forward_size = 2048", "model_size = 512"] {
        assert!(text.contains(line), "{line} in\n{text}");
    }
    let o = ifthen(&["train", "--arch", "lstm", "--data", "nowhere", "--out", p(&out), "--dry-run"]);
    let text = stdout(&o);
    assert!(text.contains("embedding_size = 16") && text.contains("hidden_size = 64"), "{text}");
    assert!(!out.exists());
}

#[test]
fn train_config_file_flags_and_env_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, TINY_LSTM).unwrap();
    let o = ifthen(&["train", "--data", "x", "--out", "y", "--config", p(&cfg), "--epochs", "7", "--dry-run"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("hidden_size = 48") && text.contains("epochs = 7") && text.contains("batch_size = 4"), "{text}");

    let via_env = Command::new(env!("CARGO_BIN_EXE_ifthen"))
        .args(["train", "--data", "x", "--out", "y", "--dry-run"])
        .env("IFTHEN_CONFIG", &cfg)
        .output()
        .unwrap();
    assert_eq!(code(&via_env), 0);
    assert!(stdout(&via_env).contains("epochs = 200"));

    let conflict = ifthen(&["train", "--arch", "transformer", "--data", "x", "--out", "y", "--config", p(&cfg), "--dry-run"]);
    assert_eq!(code(&conflict), 2);
    fs::write(&cfg, "[model]\nfamily = \"lstm\"\nhiden_size = 3\n").unwrap();
    assert_eq!(code(&ifthen(&["train", "--data", "x", "--out", "y", "--config", p(&cfg), "--dry-run"])), 2);
}

#[test]
fn train_error_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    assert_eq!(code(&ifthen(&["train", "--arch", "gru", "--data", "d", "--out", p(&out)])), 2);
    assert_eq!(code(&ifthen(&["train", "--data", "d", "--out", p(&out)])), 2);
    let missing = dir.path().join("missing");
    assert_eq!(code(&ifthen(&["train", "--arch", "lstm", "--data", p(&missing), "--out", p(&out)])), 1);
    assert_eq!(code(&ifthen(&["train", "--arch", "lstm", "--data", "d", "--out", p(&out), "--epochs", "0"])), 2);
}

#[test]
fn divergent_training_exits_numeric_and_keeps_last_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let input = dataset(dir.path(), "all.jsonl", &corpus(16));
    let data = dir.path().join("data");
    assert_eq!(code(&prepare(&input, &data, &["--valid-count", "0"])), 0);
    let cfg = dir.path().join("c.toml");
    let divergent = TINY_LSTM.replace("base_lr = 0.005", "base_lr = 1e36\nclip_norm = 0\nvalidate_every_steps = 1");
    fs::write(&cfg, divergent).unwrap();
    let out = dir.path().join("run");
    let o = ifthen(&["train", "--data", p(&data), "--out", p(&out), "--config", p(&cfg)]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("last.ckpt").is_file());
    assert!(!out.join("model.ckpt").exists());
}

/// Prepares a small corpus, memorizes it and returns `(dir, data dir, model)`.
fn trained() -> (tempfile::TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let input = dataset(dir.path(), "all.jsonl", &corpus(24));
    let data = dir.path().join("data");
    assert_eq!(code(&prepare(&input, &data, &["--valid-count", "0"])), 0);
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, TINY_LSTM).unwrap();
    let out = dir.path().join("run");
    let o = ifthen(&["train", "--data", p(&data), "--out", p(&out), "--config", p(&cfg)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["model.ckpt", "best.ckpt", "last.ckpt", "history.jsonl", "manifest.json", "config.toml"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    (dir, data, out.join("model.ckpt"))
}

#[test]
fn evaluate_and_predict_on_a_memorized_corpus() {
    let (dir, data, model) = trained();
    let train_file = data.join("train.jsonl");
    let report_path = dir.path().join("report.json");
    let o = ifthen(&["evaluate", "--model", p(&model), "--data", p(&train_file), "--report", p(&report_path), "--format", "json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let printed: EvalReport = serde_json::from_str(&stdout(&o)).unwrap();
    let written: EvalReport = serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(printed, written);
    assert_eq!(written.sequence_acc, 1.0);
    written.check_invariants().unwrap();
    assert!(dir.path().join("report.manifest.json").is_file());

    let table = ifthen(&["evaluate", "--model", p(&model), "--data", p(&train_file), "--report", p(&report_path)]);
    assert!(stdout(&table).contains("Sequence"));

    let examples = corpus(24);
    let o = ifthen(&["predict", "--model", p(&model), "--text", &examples[0].title]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert_eq!(text.lines().next().unwrap(), examples[0].recipe.serialize().to_string());
    assert!(text.contains(&format!("trigger_channel   {}", examples[0].recipe.trigger_channel())));

    let batch = dir.path().join("batch.txt");
    let titles: Vec<&str> = examples.iter().take(5).map(|e| e.title.as_str()).collect();
    fs::write(&batch, titles.join("\n")).unwrap();
    let o = ifthen(&["predict", "--model", p(&model), "--batch", p(&batch)]);
    assert_eq!(code(&o), 0);
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(lines.len(), 5);
    let first: serde_json::Value = serde_json::from_str(&lines[0]).unwrap();
    assert_eq!(first["parsed"], examples[0].recipe.serialize().to_string());
    let preds = dir.path().join("preds.jsonl");
    let o = ifthen(&["predict", "--model", p(&model), "--batch", p(&batch), "--output", p(&preds)]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_to_string(&preds).unwrap().lines().count(), 5);

    assert_eq!(code(&ifthen(&["predict", "--model", p(&model), "--text", ""])), 2);
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let o = ifthen(&["evaluate", "--model", p(&model), "--data", p(&empty), "--report", p(&report_path)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("no examples"));
    let garbage = dir.path().join("garbage.ckpt");
    fs::write(&garbage, "nope").unwrap();
    assert_eq!(code(&ifthen(&["evaluate", "--model", p(&garbage), "--data", p(&train_file), "--report", p(&report_path)])), 2);
    assert_eq!(code(&ifthen(&["predict", "--model", p(&dir.path().join("none.ckpt")), "--text", "x"])), 1);
}
