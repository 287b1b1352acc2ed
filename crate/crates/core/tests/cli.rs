use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fadag::fixtures::{b4_logits, chain_logits};
use fadag::random_lattice;
use serde_json::Value;
use tempfile::TempDir;

fn fadag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fadag"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(o: &Output) -> Value {
    serde_json::from_str(stdout(o).trim()).expect("stdout is one JSON object")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Files {
    dir: TempDir,
}

impl Files {
    fn new() -> Self {
        Files {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn b4(&self) -> PathBuf {
        let p = self.path("b4.json");
        b4_logits().save(&p).unwrap();
        p
    }

    fn random(&self, seed: u64, l: usize, v: usize) -> PathBuf {
        let p = self.path(&format!("random-{seed}-{l}-{v}.json"));
        random_lattice(seed, l, v).unwrap().save(&p).unwrap();
        p
    }

    fn text(&self, name: &str, body: &str) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, body).unwrap();
        p
    }
}

fn close(v: &Value, expected: f64) -> bool {
    (v.as_f64().unwrap() - expected).abs() < 1e-12
}

#[test]
fn score_b4() {
    let f = Files::new();
    let o = fadag(&["score", path_str(&f.b4()), "0,1,1", "--n", "2"]);
    assert_eq!(o.status.code(), Some(0));
    let v = json(&o);
    assert!(close(&v["precision"], 0.5));
    assert!(close(&v["bp"], 1.0));
    assert!(close(&v["loss"], -0.5));
}

#[test]
fn score_chain_is_perfect() {
    let f = Files::new();
    let p = f.path("chain.json");
    chain_logits(&[0, 1, 2, 1], 3).save(&p).unwrap();
    let v = json(&fadag(&["score", path_str(&p), "0,1,2,1"]));
    assert!(close(&v["loss"], -1.0));
}

#[test]
fn score_reads_reference_file() {
    let f = Files::new();
    let r = f.text("ref.json", "[0, 1, 1]");
    let o = fadag(&["score", path_str(&f.b4()), "--ref-file", path_str(&r)]);
    assert!(close(&json(&o)["loss"], -0.5));
}

#[test]
fn score_rejects_order_longer_than_reference() {
    let f = Files::new();
    let o = fadag(&["score", path_str(&f.b4()), "0,1,1", "--n", "5"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn nll_b4_is_ln2() {
    let f = Files::new();
    let v = json(&fadag(&["nll", path_str(&f.b4()), "0,1,1"]));
    assert!(close(&v["nll"], std::f64::consts::LN_2));
}

#[test]
fn nll_rejects_reference_longer_than_lattice() {
    let f = Files::new();
    let o = fadag(&["nll", path_str(&f.b4()), "0,1,1,1,1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn decode_b4_every_strategy() {
    let f = Files::new();
    let b4 = f.b4();
    for s in ["greedy", "lookahead", "viterbi"] {
        let v = json(&fadag(&["decode", path_str(&b4), "--strategy", s]));
        assert_eq!(v["tokens"], serde_json::json!([0, 1, 1]), "{s}");
        assert_eq!(v["path"], serde_json::json!([1, 2, 4]), "{s}");
    }
}

#[test]
fn decode_writes_stats() {
    let f = Files::new();
    let prefix = f.path("stats");
    let o = fadag(&[
        "decode",
        path_str(&f.b4()),
        "--strategy",
        "greedy",
        "--stats-out",
        path_str(&prefix),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let summary = std::fs::read_to_string(f.path("stats.summary.csv")).unwrap();
    assert!(summary.starts_with("neg_log_path,"));
    let vertices = std::fs::read_to_string(f.path("stats.vertices.csv")).unwrap();
    assert_eq!(vertices.lines().count(), 1 + 4);
}

#[test]
fn unknown_strategy_is_a_usage_error() {
    let f = Files::new();
    let o = fadag(&["decode", path_str(&f.b4()), "--strategy", "beam"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn oracle_check_passes_on_small_lattices() {
    let f = Files::new();
    let o = fadag(&["oracle-check", path_str(&f.b4()), "0,1,1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS"));
    let o = fadag(&[
        "oracle-check",
        path_str(&f.random(3, 7, 4)),
        "0,1,2,3",
        "--n",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn oracle_check_refuses_large_lattices() {
    let f = Files::new();
    let o = fadag(&["oracle-check", path_str(&f.random(3, 20, 4)), "0,1,2"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gradcheck_both_losses() {
    let f = Files::new();
    let lat = f.random(11, 5, 3);
    for loss in ["fa", "nll"] {
        let o = fadag(&["gradcheck", path_str(&lat), "0,2,1", "--loss", loss]);
        assert_eq!(o.status.code(), Some(0), "{loss}: {}", stdout(&o));
        assert!(stdout(&o).contains("PASS"));
    }
}

#[test]
fn gradcheck_nll_on_unreachable_reference() {
    let f = Files::new();
    // B4 cannot emit token 2 at its last vertex.
    let o = fadag(&["gradcheck", path_str(&f.b4()), "0,1,2", "--loss", "nll"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_lattice_file_is_an_io_error() {
    let o = fadag(&["score", "/nonexistent/lattice.json", "0,1"]);
    assert_eq!(o.status.code(), Some(2));
}

fn single_corpus(f: &Files) -> PathBuf {
    let corpus = f.path("corpus.jsonl");
    let o = fadag(&[
        "--seed",
        "0",
        "corpus",
        "--preset",
        "single",
        "--out",
        path_str(&corpus),
    ]);
    assert_eq!(o.status.code(), Some(0));
    corpus
}

fn train(f: &Files, corpus: &Path, config: &Path, tag: &str) -> (String, String) {
    let model = f.path(&format!("{tag}.model.json"));
    let report = f.path(&format!("{tag}.report.csv"));
    let o = fadag(&[
        "--quiet",
        "train",
        path_str(corpus),
        path_str(config),
        "--model-out",
        path_str(&model),
        "--report-out",
        path_str(&report),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(stdout(&o).is_empty());
    (
        std::fs::read_to_string(model).unwrap(),
        std::fs::read_to_string(report).unwrap(),
    )
}

#[test]
fn train_single_preset_and_reload() {
    let f = Files::new();
    let corpus = single_corpus(&f);
    let config = f.text("config.json", "{}");
    let (model, report) = train(&f, &corpus, &config, "a");
    let lookahead: Vec<&str> = report
        .lines()
        .filter(|l| l.split(',').nth(1) == Some("lookahead"))
        .collect();
    assert!(!lookahead.is_empty());
    assert!(lookahead
        .iter()
        .all(|l| l.split(',').nth(3) == Some("true")));

    let reloaded = fadag::ToyModel::load(f.path("a.model.json")).unwrap();
    let corpus = fadag::ToyCorpus::load(&corpus, None).unwrap();
    let again =
        fadag::train::eval_report(&reloaded, &corpus, &fadag::TrainConfig::default()).unwrap();
    let mut csv = Vec::new();
    again.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap(), report);

    let (model2, report2) = train(&f, &f.path("corpus.jsonl"), &config, "b");
    assert_eq!(model, model2);
    assert_eq!(report, report2);
}

#[test]
fn zero_finetune_matches_nll_only() {
    let f = Files::new();
    let corpus = single_corpus(&f);
    let a = f.text("a.json", r#"{"pretrain_steps": 300, "finetune_steps": 0}"#);
    let b = f.text(
        "b.json",
        r#"{"pretrain_steps": 300, "finetune_steps": 0, "finetune_learning_rate": 0.5}"#,
    );
    assert_eq!(train(&f, &corpus, &a, "a"), train(&f, &corpus, &b, "b"));
}

#[test]
fn missing_corpus_is_an_io_error() {
    let f = Files::new();
    let config = f.text("config.json", "{}");
    let o = fadag(&[
        "train",
        "/nonexistent/corpus.jsonl",
        path_str(&config),
        "--model-out",
        path_str(&f.path("m.json")),
        "--report-out",
        path_str(&f.path("r.csv")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_prints_csv() {
    let f = Files::new();
    let corpus = single_corpus(&f);
    let config = f.text(
        "config.json",
        r#"{"pretrain_steps": 100, "finetune_steps": 20}"#,
    );
    let o = fadag(&[
        "sweep",
        path_str(&corpus),
        path_str(&config),
        "--lambdas",
        "2,3",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("lambda,objective,exact_match,fa_score"));
    assert_eq!(lines.count(), 4);
}
