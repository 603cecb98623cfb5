use std::path::Path;
use std::process::{Command, Output};

use seqbelief::data::{parse_dataset, read_jsonl};
use seqbelief::evaluation::EvalReport;
use seqbelief::predict::{BeliefTrajectory, TrajectoryEntry};

fn seqbelief(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqbelief"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = seqbelief(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

#[test]
fn unknown_flag_prints_usage_and_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = seqbelief(dir.path(), &["synth", "--n", "1", "--bogus"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn missing_file_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = seqbelief(dir.path(), &["predict", "--data", "nope.jsonl", "--checkpoint", "nope.ckpt", "--out", "p.jsonl"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn bad_config_is_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--n", "5", "--d-emb", "8", "--out", "d.jsonl"]);
    let out = seqbelief(dir.path(), &["train", "--train", "d.jsonl", "--out", "m.ckpt", "--dropout", "1.5"]);
    assert_eq!(code(&out), 1);
    assert!(!dir.path().join("m.ckpt").exists());
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--n", "1", "--seed", "7", "--out", "a.jsonl"]);
    ok(dir.path(), &["synth", "--n", "1", "--seed", "7", "--out", "b.jsonl"]);
    let read = |name: &str| std::fs::read(dir.path().join(name)).unwrap();
    assert_eq!(read("a.jsonl"), read("b.jsonl"));
    assert_eq!(read("a.jsonl.latents.jsonl"), read("b.jsonl.latents.jsonl"));
    assert!(!dir.path().join("a.jsonl.partial").exists());
}

fn trajectory(id: &str, rate: f64) -> BeliefTrajectory {
    BeliefTrajectory {
        company_id: id.into(),
        entries: vec![TrajectoryEntry {
            call_index: 1,
            expert_type: seqbelief::data::ExpertType::Customer,
            posterior_mean: vec![0.0],
            rate_mean: rate,
            rate_lo90: rate,
            rate_hi90: rate,
            status_attention: vec![1.0],
            exchange_attention: vec![1.0],
        }],
    }
}

#[test]
fn eval_reproduces_portfolio_fixture() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--n", "40", "--seed", "3", "--d-emb", "8", "--out", "truth.jsonl"]);
    let records = parse_dataset(dir.path().join("truth.jsonl")).unwrap();
    let pos: Vec<_> = records.iter().filter(|r| r.label == 1).collect();
    let neg = records.iter().find(|r| r.label == 0).unwrap();
    // one hit, one false alarm, one miss
    let pred = [
        trajectory(&pos[0].company_id, 0.9),
        trajectory(&neg.company_id, 0.8),
        trajectory(&pos[1].company_id, 0.1),
    ];
    seqbelief::data::write_jsonl(dir.path().join("pred.jsonl"), &pred).unwrap();
    ok(
        dir.path(),
        &["eval", "--pred", "pred.jsonl", "--truth", "truth.jsonl", "--threshold", "0.5", "--out", "report.json"],
    );
    let report: EvalReport = serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!((report.confusion.tp, report.confusion.fp, report.confusion.fn_), (1, 1, 1));
    assert!((report.roi.unwrap() - 142.33).abs() < 0.005);
    assert_eq!(report.auc, Some(0.5));
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let tiny = ["--d-s", "2", "--hidden-dims", "8", "--token-dim", "8", "--max-rounds", "2", "--batch-size", "8"];
    ok(d, &["synth", "--n", "40", "--seed", "1", "--d-s", "2", "--d-emb", "8", "--out", "train.jsonl"]);
    ok(d, &["synth", "--n", "20", "--seed", "2", "--d-s", "2", "--d-emb", "8", "--out", "test.jsonl"]);
    std::fs::write(d.join("cfg.json"), r#"{"learning_rate": 0.003, "max_rounds": 50}"#).unwrap();
    let mut train = vec!["--jobs", "1", "train", "--train", "train.jsonl", "--valid", "test.jsonl", "--config", "cfg.json", "--out", "m.ckpt"];
    train.extend(tiny);
    ok(d, &train);
    let history = std::fs::read_to_string(d.join("m.ckpt.history.csv")).unwrap();
    // flag beats the config file: two rounds, a train and a valid row each
    assert_eq!(history.lines().count(), 1 + 4);

    ok(d, &["predict", "--data", "test.jsonl", "--checkpoint", "m.ckpt", "--out", "pred.jsonl", "--band-samples", "20"]);
    ok(d, &["predict", "--data", "test.jsonl", "--checkpoint", "m.ckpt", "--out", "pred2.jsonl", "--band-samples", "20"]);
    assert_eq!(std::fs::read(d.join("pred.jsonl")).unwrap(), std::fs::read(d.join("pred2.jsonl")).unwrap());
    let traj: Vec<BeliefTrajectory> = read_jsonl(d.join("pred.jsonl")).unwrap();
    assert_eq!(traj.len(), 20);

    ok(d, &["eval", "--pred", "pred.jsonl", "--truth", "test.jsonl", "--tune-on", "pred.jsonl", "--out", "report.json"]);
    let report: EvalReport = serde_json::from_slice(&std::fs::read(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.n, 20);
    assert!((0.0..=1.0).contains(&report.metrics.f1));

    ok(d, &["attention-report", "--trajectories", "pred.jsonl", "--data", "test.jsonl", "--out", "att.csv"]);
    let csv = std::fs::read_to_string(d.join("att.csv")).unwrap();
    assert!(csv.starts_with("group,key,label,mean_attention,n\n"));
    assert!(csv.lines().any(|l| l.starts_with("call_index,1,all,")));
    assert!(csv.lines().any(|l| l.starts_with("expert_type,")));
}

#[test]
fn sweep_writes_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--n", "30", "--seed", "4", "--d-s", "2", "--d-emb", "8", "--out", "train.jsonl"]);
    std::fs::write(d.join("grid.json"), r#"{"d_s": [1, 2], "w": [0.0]}"#).unwrap();
    ok(
        d,
        &[
            "sweep", "--grid", "grid.json", "--train", "train.jsonl", "--out", "sweep.csv", "--max-rounds", "1", "--hidden-dims", "8",
            "--token-dim", "8",
        ],
    );
    let csv = std::fs::read_to_string(d.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn ingest_embeds_text_and_writes_scaler() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--n", "12", "--seed", "5", "--d-emb", "8", "--out", "raw.jsonl"]);
    // replace embeddings with text
    let text: String = std::fs::read_to_string(d.join("raw.jsonl"))
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            for call in v["calls"].as_array_mut().unwrap() {
                for x in call["exchanges"].as_array_mut().unwrap() {
                    *x = serde_json::json!({"q": "How is churn trending?", "a": "Churn fell sharply this year."});
                }
            }
            v.to_string() + "\n"
        })
        .collect();
    std::fs::write(d.join("raw.jsonl"), text).unwrap();
    let cache = d.join("cache");
    let out = Command::new(env!("CARGO_BIN_EXE_seqbelief"))
        .args(["ingest", "--in", "raw.jsonl", "--out", "emb.jsonl", "--d-emb", "16", "--split", "0.5,0.25,0.25"])
        .current_dir(d)
        .env("SEQBELIEF_CACHE_DIR", &cache)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let recs = parse_dataset(d.join("emb.jsonl")).unwrap();
    assert_eq!(recs.len(), 12);
    assert_eq!(recs[0].d_emb(), Some(16));
    let scaler: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("emb.jsonl.scaler.json")).unwrap()).unwrap();
    assert_eq!(scaler["d_emb"], 16);
    for part in ["train", "valid", "test"] {
        assert!(d.join(format!("emb.jsonl.{part}.jsonl")).exists());
    }
    assert!(std::fs::read_dir(&cache).unwrap().next().is_some());
}
