use std::path::Path;
use std::process::{Command, Output};

use fitrag::synthetic::{redundant_corpus, ReaderLlm};
use serde_json::{json, Value};

fn fitrag(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fitrag"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = fitrag(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_jsonl(path: &Path, rows: impl IntoIterator<Item = Value>) {
    let body: String = rows.into_iter().map(|r| format!("{r}\n")).collect();
    std::fs::write(path, body).unwrap();
}

/// A small world on disk: corpus, questions, mock script and a config with
/// every artifact path filled in but not yet built.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let world = redundant_corpus(4, "c", 12, 5, 6, 0.3);
    write_jsonl(
        &dir.path().join("corpus.jsonl"),
        world
            .corpus
            .iter()
            .map(|d| json!({"id": d.doc_id, "title": d.title, "text": d.text})),
    );
    write_jsonl(
        &dir.path().join("qa.jsonl"),
        world
            .qa()
            .iter()
            .map(|q| json!({"question_id": q.question_id, "question": q.question, "answers": q.gold_answers})),
    );
    let reader = ReaderLlm::new(&world.facts).with_known(world.facts.iter().step_by(3));
    write_jsonl(
        &dir.path().join("script.jsonl"),
        reader.script().iter().map(|e| serde_json::to_value(e).unwrap()),
    );
    let config = json!({
        "seed": 1,
        "paths": {
            "corpus": "corpus.jsonl",
            "index": "index.bin",
            "train_qa": "qa.jsonl",
            "training_pairs": "pairs.jsonl",
            "scorer": "scorer.json",
            "detector_data": "detector_data.jsonl",
            "detector": "detector.json",
            "nn_reference": "nn_ref.jsonl"
        },
        "embedding": {"kind": "hash", "dim": 64},
        "llm": {"kind": "mock", "script": "script.jsonl", "strict": false, "fallback": "I don't know."},
        "recognizer": {"k_neighbors": 3},
        "top_retrieve": 20,
        "reducer": {"top_rerank": 5, "max_docs": 5},
        "annotate_k": 10,
        "scorer_training": {"epochs": 3, "hidden": [8], "feature_mode": "interaction", "learning_rate": 0.1, "hyper_step": 3.0},
        "detector_data": {"max_docs": 5, "top_rerank": 5, "top_retrieve": 20, "samples_per_question": 20},
        "detector_training": {"epochs": 10, "hidden": [8]}
    });
    std::fs::write(dir.path().join("fitrag.json"), config.to_string()).unwrap();
    dir
}

fn build_artifacts(dir: &Path) {
    for cmd in ["annotate", "train-scorer", "build-detector-data", "train-detector", "build-nn-ref"] {
        ok(dir, &[cmd]);
    }
}

#[test]
fn full_chain_then_query_and_eval() {
    let dir = workspace();
    let d = dir.path();
    build_artifacts(d);
    let lines = |f: &str| std::fs::read_to_string(d.join(f)).unwrap().lines().count();
    assert!(lines("pairs.jsonl") >= 100);
    let labels: Vec<bool> = std::fs::read_to_string(d.join("detector_data.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["label"].as_bool().unwrap())
        .collect();
    assert!(labels.contains(&true) && labels.contains(&false));

    let trace: Value = serde_json::from_str(&ok(d, &["query", "--id", "x", "What is the capital of Nowhere?"])).unwrap();
    assert_eq!(trace["question_id"], "x");
    assert!(trace["prompt_tokens"].as_u64().unwrap() > 0);
    let retrieved = trace["verdict"]["decision"] == "retrieve";
    assert_eq!(retrieved, !trace["combination"].is_null());

    // Building the index in memory and loading the saved one give the same report.
    let in_memory = ok(d, &["eval", "--ablation", "no_reducer"]);
    ok(d, &["index"]);
    assert!(d.join("index.bin").exists());
    let from_disk = ok(d, &["eval", "--ablation", "no_reducer"]);
    assert_eq!(in_memory, from_disk);

    let report: Value = serde_json::from_str(&from_disk).unwrap();
    assert_eq!(report["questions"], 12);
    assert!(report["ablations"]["no_reducer"].is_object());
    for k in ["accuracy", "retrieval_skip_rate"] {
        let v = report[k].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{k} = {v}");
    }

    ok(d, &["eval", "--template", "simple", "--out", "report.json"]);
    let saved: Value = serde_json::from_slice(&std::fs::read(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(saved["template"], "simple");
}

#[test]
fn empty_question_file_is_a_usage_error() {
    let dir = workspace();
    std::fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    let out = fitrag(dir.path(), &["eval", "--qa", "empty.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no questions"));
}

#[test]
fn bad_flags_exit_with_two() {
    let dir = workspace();
    assert_eq!(fitrag(dir.path(), &["eval", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(fitrag(dir.path(), &["eval", "--ablation", "bogus"]).status.code(), Some(2));
    assert_eq!(fitrag(dir.path(), &["--template", "haiku", "index"]).status.code(), Some(2));
    assert_eq!(fitrag(dir.path(), &[]).status.code(), Some(2));
}

#[test]
fn missing_artifacts_fail_with_the_stage() {
    let dir = workspace();
    let out = fitrag(dir.path(), &["query", "anything"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("load stage failed") && err.contains("scorer"), "{err}");

    let out = fitrag(dir.path(), &["--config", "nope.json", "index"]);
    assert_eq!(out.status.code(), Some(1));
}
