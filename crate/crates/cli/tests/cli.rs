use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn deepfood(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deepfood"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = deepfood(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    manifest: PathBuf,
    model: PathBuf,
}

fn trained(classes: &str) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let data = root.join("data");
    ok(&["dataset", "synth", "--out", s(&data), "--classes", classes, "--per-class", "3", "--size", "32"]);
    let manifest = data.join("manifest.jsonl");
    let model = root.join("model.dfck");
    let log = root.join("train.log");
    ok(&[
        "train", "--manifest", s(&manifest), "--split", "all", "--net", "mini2", "--max-iterations", "4",
        "--batch-size", "3", "--seed", "2", "--log", s(&log), "--out", s(&model), "--compute-means",
    ]);
    let lines: Vec<Value> = std::fs::read_to_string(&log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.last().unwrap()["iter"], 3);
    Fixture { _dir: dir, root, manifest, model }
}

#[test]
fn unknown_flag_is_usage_error() {
    assert_eq!(deepfood(&["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(deepfood(&["bench", "--op", "conv-naive", "--shape", "1,2,3"]).status.code(), Some(1));
    assert_eq!(deepfood(&["bench", "--op", "sideways"]).status.code(), Some(1));
    assert_eq!(deepfood(&["--help"]).status.code(), Some(0));
}

#[test]
fn train_eval_predict_inspect() {
    let f = trained("3");

    let report: Value = serde_json::from_str(&ok(&[
        "eval", "--model", s(&f.model), "--manifest", s(&f.manifest), "--split", "all", "--topk", "1,2",
    ]))
    .unwrap();
    assert_eq!(report["split_size"], 9);
    assert_eq!(report["per_class"].as_array().unwrap().len(), 3);
    let top1 = report["top1"].as_f64().unwrap();
    assert!(top1 <= report["top5"].as_f64().unwrap());
    let ks: Vec<u64> = report["topk"].as_array().unwrap().iter().map(|t| t["k"].as_u64().unwrap()).collect();
    assert!(ks.contains(&2));

    let image = f.root.join("data/ring_000.png");
    let image = if image.exists() { image } else { f.root.join("data/hstripes_000.png") };
    let preds: Value = serde_json::from_str(&ok(&["predict", "--model", s(&f.model), "--image", s(&image), "--topk", "3"])).unwrap();
    let preds = preds.as_array().unwrap();
    assert_eq!(preds.len(), 3);
    let total: f64 = preds.iter().map(|p| p["probability"].as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-5);
    assert_eq!(preds[0]["name"].as_str().map(|n| ["hstripes", "vstripes", "diag_up"].contains(&n)), Some(true));

    let human = ok(&["predict", "--model", s(&f.model), "--image", s(&image), "--bbox", "0,0,16,16", "--human"]);
    assert!(human.starts_with(" 1."));

    let info: Value = serde_json::from_str(&ok(&["inspect-checkpoint", s(&f.model)])).unwrap();
    assert_eq!(info["spec"]["classes"], 3);
    let names: Vec<&str> = info["tensors"].as_array().unwrap().iter().map(|t| t["name"].as_str().unwrap()).collect();
    assert!(names.contains(&"classifier.weights"));
}

#[test]
fn damaged_checkpoint_is_data_error() {
    let f = trained("2");
    let bytes = std::fs::read(&f.model).unwrap();
    let cut = f.root.join("cut.dfck");
    std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    let out = deepfood(&["eval", "--model", s(&cut), "--manifest", s(&f.manifest)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("truncated"));

    let missing = deepfood(&["eval", "--model", s(&f.model), "--manifest", s(&f.root.join("nope.jsonl"))]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn divergence_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    ok(&["dataset", "synth", "--out", s(&data), "--classes", "2", "--per-class", "2", "--size", "32"]);
    let out = deepfood(&[
        "train", "--manifest", s(&data.join("manifest.jsonl")), "--split", "all", "--net", "mini2",
        "--max-iterations", "30", "--batch-size", "4", "--lr", "1e12", "--out", s(&dir.path().join("m.dfck")),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!dir.path().join("m.dfck").exists());
}

#[test]
fn finetune_to_new_classes() {
    let f = trained("3");
    let data = f.root.join("b");
    ok(&["dataset", "synth", "--out", s(&data), "--classes", "2", "--first", "8", "--per-class", "2", "--size", "32"]);
    let manifest = data.join("manifest.jsonl");
    let out = f.root.join("tuned.dfck");
    let log = f.root.join("ft.log");
    let args = [
        "finetune", "--from", s(&f.model), "--manifest", s(&manifest), "--split", "all", "--max-iterations", "2",
        "--batch-size", "2", "--out", s(&out), "--log", s(&log),
    ];
    ok(&args);
    let info: Value = serde_json::from_str(&ok(&["inspect-checkpoint", s(&out)])).unwrap();
    assert_eq!(info["spec"]["classes"], 2);
    assert_eq!(info["spec"]["class_names"], serde_json::json!(["square", "dots"]));

    let mut wrong = args.to_vec();
    wrong.extend(["--classes", "5"]);
    assert_eq!(deepfood(&wrong).status.code(), Some(1));
}

#[test]
fn dataset_split_assigns_every_row() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    ok(&["dataset", "synth", "--out", s(&data), "--kind", "cluttered", "--classes", "2", "--per-class", "5", "--canvas", "40", "--patch", "16"]);
    let split = dir.path().join("split.jsonl");
    ok(&["dataset", "split", "--manifest", s(&data.join("manifest.jsonl")), "--out", s(&split), "--seed", "3"]);
    let rows: Vec<Value> = std::fs::read_to_string(&split).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 10);
    let train = rows.iter().filter(|r| r["split"] == "train").count();
    assert_eq!(train, 6);
    assert!(rows.iter().all(|r| r["bbox"].is_array() || r["bbox"].is_object()));
    assert_eq!(deepfood(&["dataset", "split", "--manifest", s(&split), "--scheme", "folds:3:4", "--out", s(&split)]).status.code(), Some(1));
}
