use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use frameforge::clustering::parse_assignment;
use frameforge::data::{load_dataset, write_dataset, Dataset, InstanceRecord};
use frameforge::learning::{load_checkpoint, EncoderParams, LossKind};
use frameforge::synth::{generate, SynthConfig};
use tempfile::TempDir;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frameforge"))
        .args(args)
        .current_dir(dir)
        .env_remove("FRAMEFORGE_THREADS")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn corpus(dir: &Path) {
    let ds = generate(&SynthConfig {
        num_lemmas: 9,
        num_frames: 4,
        instances_per_lu: 5,
        ..SynthConfig::default()
    })
    .unwrap();
    write_dataset(&ds, dir.join("data.jsonl")).unwrap();
}

fn record(id: &str, lemma: &str, frame: &str, v: Vec<f32>) -> InstanceRecord {
    InstanceRecord {
        id: id.into(),
        lemma: lemma.into(),
        lu_id: format!("{lemma}.{frame}"),
        gold_frame: frame.into(),
        v_word: v.clone(),
        v_mask: v,
        sentence: None,
    }
}

#[test]
fn split_writes_file_and_prints_fold_table() {
    let dir = TempDir::new().unwrap();
    corpus(dir.path());
    let stdout = ok(dir.path(), &["split", "--data", "data.jsonl", "--out", "a.json"]);
    assert!(stdout.starts_with("fold"));
    assert_eq!(stdout.lines().count(), 4);
    ok(dir.path(), &["split", "--data", "data.jsonl", "--out", "b.json", "--seed", "42"]);
    assert_eq!(fs::read(dir.path().join("a.json")).unwrap(), fs::read(dir.path().join("b.json")).unwrap());
}

#[test]
fn split_rejects_two_lemmas() {
    let dir = TempDir::new().unwrap();
    let ds = Dataset::from_records(vec![
        record("a", "x", "F", vec![1.0, 0.0]),
        record("b", "y", "G", vec![0.0, 1.0]),
    ])
    .unwrap();
    write_dataset(&ds, dir.path().join("d.jsonl")).unwrap();
    let out = run(dir.path(), &["split", "--data", "d.jsonl", "--out", "s.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
    assert!(!dir.path().join("s.json").exists());
}

#[test]
fn missing_input_exits_2() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), &["eval", "--data", "nope.jsonl", "--pred", "nope.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.jsonl"));
}

#[test]
fn degenerate_vector_exits_3() {
    let dir = TempDir::new().unwrap();
    let ds = Dataset::from_records(vec![
        record("a", "x", "F", vec![0.0, 0.0]),
        record("b", "y", "G", vec![0.0, 1.0]),
    ])
    .unwrap();
    write_dataset(&ds, dir.path().join("d.jsonl")).unwrap();
    let out = run(
        dir.path(),
        &["cluster", "--data", "d.jsonl", "--mode", "one-step", "--alpha", "0", "--threshold", "1", "--out", "a.json"],
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn vanilla_training_emits_identity() {
    let dir = TempDir::new().unwrap();
    corpus(dir.path());
    ok(dir.path(), &["train", "--data", "data.jsonl", "--loss", "vanilla", "--out", "ck.json"]);
    let ck = load_checkpoint(dir.path().join("ck.json")).unwrap();
    assert_eq!(ck.loss.kind, LossKind::Vanilla);
    assert_eq!(ck.encoder, EncoderParams::identity(16));
    assert!(ck.train.is_none() && ck.epoch_losses.is_empty());
}

#[test]
fn eval_of_gold_clustering_is_perfect() {
    let dir = TempDir::new().unwrap();
    corpus(dir.path());
    let ds = load_dataset(dir.path().join("data.jsonl")).unwrap();
    let frames: Vec<&str> = ds.frames().into_iter().collect();
    let assignments: serde_json::Map<String, serde_json::Value> = ds
        .records()
        .iter()
        .map(|r| (r.id.clone(), frames.iter().position(|f| *f == r.gold_frame).unwrap().into()))
        .collect();
    let pred = serde_json::json!({
        "assignments": assignments,
        "num_clusters": frames.len(),
        "num_plus": null,
        "mode": "one-step",
        "threshold": 1.0,
        "alpha": 0.0,
        "checkpoint_hash": null,
    });
    fs::write(dir.path().join("gold.json"), pred.to_string()).unwrap();
    let stdout = ok(dir.path(), &["eval", "--data", "data.jsonl", "--pred", "gold.json"]);
    assert!(stdout.contains("100.0 / 100.0 / 100.0  100.0 / 100.0 / 100.0"), "{stdout}");
}

#[test]
fn rank_same_space_single_frame_lemmas() {
    let dir = TempDir::new().unwrap();
    let mut records = Vec::new();
    for (k, (lemma, frame)) in [("x", "F"), ("x", "F"), ("x", "F"), ("y", "G"), ("y", "G")].iter().enumerate() {
        records.push(record(&format!("i{k}"), lemma, frame, vec![1.0 + k as f32, (k * k) as f32 - 2.0]));
    }
    write_dataset(&Dataset::from_records(records).unwrap(), dir.path().join("d.jsonl")).unwrap();
    let stdout = ok(dir.path(), &["rank", "--data", "d.jsonl", "--alpha", "0.5", "--space", "same"]);
    assert!(stdout.starts_with("same recall 1.0000 over 5 queries"), "{stdout}");
}

#[test]
fn export_matches_encoder_and_round_trips() {
    let dir = TempDir::new().unwrap();
    corpus(dir.path());
    ok(dir.path(), &["train", "--data", "data.jsonl", "--loss", "triplet", "--lr", "0.05", "--out", "ck.json"]);
    ok(dir.path(), &["export-embeddings", "--data", "data.jsonl", "--checkpoint", "ck.json", "--alpha", "0", "--out", "e.tsv"]);
    let ds = load_dataset(dir.path().join("data.jsonl")).unwrap();
    let enc = load_checkpoint(dir.path().join("ck.json")).unwrap().encoder;
    let text = fs::read_to_string(dir.path().join("e.tsv")).unwrap();
    assert_eq!(text.lines().count(), ds.len());
    for (line, r) in text.lines().zip(ds.records()) {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(&cols[..3], &[r.id.as_str(), r.lemma.as_str(), r.gold_frame.as_str()]);
        let expect = enc.encode(&r.v_word).unwrap();
        assert_eq!(cols.len(), 3 + expect.len());
        for (c, e) in cols[3..].iter().zip(&expect) {
            assert!((c.parse::<f64>().unwrap() - e).abs() <= 1e-6);
        }
    }
}

#[test]
fn cluster_and_cv_write_expected_artifacts() {
    let dir = TempDir::new().unwrap();
    corpus(dir.path());
    let before = fs::read(dir.path().join("data.jsonl")).unwrap();
    ok(
        dir.path(),
        &["cluster", "--data", "data.jsonl", "--mode", "two-step", "--alpha", "0.5", "--threshold", "0.7", "--out", "a.json"],
    );
    let a = parse_assignment(&fs::read_to_string(dir.path().join("a.json")).unwrap()).unwrap();
    let ds = load_dataset(dir.path().join("data.jsonl")).unwrap();
    assert_eq!(a.assignments.len(), ds.len());
    assert!(a.num_plus.is_some());

    let stdout = ok(
        dir.path(),
        &["cv", "--data", "data.jsonl", "--loss", "triplet", "--mode", "one-step", "--budget", "2", "--lr", "0.05", "--threads", "2"],
    );
    assert!(stdout.contains("triplet_budget2 one-step"), "{stdout}");
    for k in 1..=3 {
        let fold = dir.path().join(format!("runs/triplet_budget2/one-step/fold{k}"));
        for f in ["checkpoint.json", "dev_grid.csv", "test_metrics.json"] {
            assert!(fold.join(f).exists(), "{}", fold.join(f).display());
        }
        let grid = fs::read_to_string(fold.join("dev_grid.csv")).unwrap();
        assert!(grid.starts_with("alpha,margin,threshold,bcf\n"));
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("runs/summary.json")).unwrap()).unwrap();
    assert!(summary.get("triplet_budget2/one-step").is_some());
    assert_eq!(fs::read(dir.path().join("data.jsonl")).unwrap(), before);
}

#[test]
fn bad_flags_exit_2() {
    let dir = TempDir::new().unwrap();
    for args in [
        &["cv", "--data", "d", "--loss", "hinge", "--mode", "one-step"][..],
        &["cv", "--data", "d", "--loss", "triplet", "--mode", "three-step"],
        &["cv", "--data", "d", "--loss", "triplet", "--mode", "one-step", "--budget", "0"],
        &["rank", "--data", "d", "--alpha", "0", "--space", "other"],
    ] {
        assert_eq!(run(dir.path(), args).status.code(), Some(2), "{args:?}");
    }
}
