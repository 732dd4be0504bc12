use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use serde_json::Value;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn hashemb(args: &[&str], stdin: &str) -> Run {
    let mut child = Command::new(env!("CARGO_BIN_EXE_hashemb"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    Run {
        code: out.status.code().unwrap(),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn ok(args: &[&str], stdin: &str) -> String {
    let r = hashemb(args, stdin);
    assert_eq!(r.code, 0, "{args:?}: {}", r.stderr);
    r.stdout
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn vocab_file(dir: &Path) -> PathBuf {
    let path = dir.join("vocab.tsv");
    ok(&["build-vocab", "--corpus", s(&fixture("toy_corpus.txt")), "--out", s(&path)], "");
    path
}

#[test]
fn md5_index_and_bits() {
    let out = ok(&["hash", "--buckets", "50000"], "play\n\nplays\n");
    // plain MD5 digests of play / plays reduced mod 50,000
    assert_eq!(out, "play\t15933\nplays\t3486\n");
    let out = ok(&["hash", "--bits", "8"], "play\n");
    assert_eq!(out, "play\t10100011\n");
    let keyed = ok(&["hash", "--buckets", "50000", "--md5-key", "k"], "play\n");
    assert_ne!(keyed, "play\t15933\n");
}

#[test]
fn exit_codes() {
    assert_eq!(hashemb(&["--help"], "").code, 0);
    assert_eq!(hashemb(&["hash", "--nope"], "").code, 1);
    assert_eq!(hashemb(&["frobnicate"], "").code, 1);
    let r = hashemb(&["hash", "--scheme", "lsh-sign", "--bits", "8"], "x\n");
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("--vocab") && r.stdout.is_empty());
    assert_eq!(hashemb(&["hash"], "x\n").code, 1);
    assert_eq!(hashemb(&["metrics", "--input", "/nonexistent/metrics.json"], "").code, 2);
    assert_eq!(hashemb(&["metrics"], "{not json").code, 2);
    assert_eq!(hashemb(&["corrupt", "--p-shuffle", "0.8", "--p-random", "0.5"], "a b\n").code, 1);
    assert_eq!(hashemb(&["audit-params", "--variant", "pool", "--t", "128"], "").code, 1);
    assert_eq!(hashemb(&["build-vocab"], "").code, 2);
}

#[test]
fn vocab_header_and_rows() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(vocab_file(dir.path())).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("#hashemb-vocab v1 cap=50000 content_hash="), "{header}");
    let first: Vec<&str> = lines.next().unwrap().split('\t').collect();
    assert_eq!(first.len(), 3);
    assert_eq!(first[1], "0");
}

#[test]
fn saved_state_reproduces_lsh_output() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = vocab_file(dir.path());
    let state = dir.path().join("h.state");
    let input = "played\nplaying\nunseenword\n";
    let first = ok(
        &["hash", "--scheme", "lsh-argmax", "--buckets", "512", "--seed", "9", "--vocab", s(&vocab), "--save-state", s(&state)],
        input,
    );
    assert_eq!(first.lines().count(), 3);
    let again = ok(&["hash", "--state", s(&state), "--vocab", s(&vocab)], input);
    assert_eq!(first, again);

    let other = dir.path().join("other.tsv");
    ok(&["build-vocab", "--out", s(&other)], "completely different words here\n");
    let r = hashemb(&["hash", "--state", s(&state), "--vocab", s(&other)], input);
    assert_eq!(r.code, 2, "{}", r.stderr);
    assert_eq!(hashemb(&["hash", "--state", s(&state), "--seed", "1"], input).code, 1);
}

#[test]
fn sign_bits_have_requested_length() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = vocab_file(dir.path());
    let out = ok(&["hash", "--scheme", "lsh-sign", "--bits", "32", "--vocab", s(&vocab)], "play\nplays\n");
    for line in out.lines() {
        let bits = line.split('\t').nth(1).unwrap();
        assert_eq!(bits.len(), 32);
        assert!(bits.chars().all(|c| c == '0' || c == '1'));
    }
}

#[test]
fn corrupt_labels_and_separators() {
    let input = "a b c d e f g h i j\n\nk l m n o p q r s t\n";
    let out = ok(&["corrupt", "--p-shuffle", "0.2", "--p-random", "0.2", "--seed", "3"], input);
    let blocks: Vec<&str> = out.split("\n\n").filter(|b| !b.is_empty()).collect();
    assert_eq!(blocks.len(), 2);
    for block in blocks {
        let rows: Vec<(&str, &str)> = block.lines().map(|l| l.split_once('\t').unwrap()).collect();
        assert_eq!(rows.len(), 10);
        let count = |label| rows.iter().filter(|(_, l)| *l == label).count();
        assert_eq!((count("INTACT"), count("SHUFFLED"), count("RANDOM")), (6, 2, 2));
    }
    assert_eq!(out, ok(&["corrupt", "--p-shuffle", "0.2", "--p-random", "0.2", "--seed", "3"], input));
    let clean = ok(&["corrupt", "--p-shuffle", "0", "--p-random", "0"], "x y\n");
    assert_eq!(clean, "x\tINTACT\ny\tINTACT\n\n");
}

#[test]
fn fresh_embeddings() {
    let out = ok(&["embed", "--variant", "proj", "--dim", "5", "--bits", "64"], "play\nneverseen\n");
    let rows: Vec<Vec<f64>> = out
        .lines()
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.len() == 5));
    assert_eq!(out, ok(&["embed", "--variant", "proj", "--dim", "5", "--bits", "64"], "play\nneverseen\n"));

    let emb = ok(&["embed", "--variant", "emb", "--dim", "3", "--buckets", "10"], "a\n");
    assert_eq!(emb.trim().split(',').count(), 3);
    let pool = ok(&["embed", "--variant", "pool", "--dim", "3", "--bits", "16", "--k", "4"], "a\n");
    assert_eq!(pool.trim().split(',').count(), 3);

    let dir = tempfile::tempdir().unwrap();
    let vocab = vocab_file(dir.path());
    let r = hashemb(&["embed", "--variant", "emb", "--dim", "3", "--scheme", "lsh-sign", "--bits", "8", "--vocab", s(&vocab)], "a\n");
    assert_eq!(r.code, 1);
    assert_eq!(hashemb(&["embed", "--dim", "3"], "a\n").code, 1);
}

#[test]
fn audit_single_variant() {
    let v: Value = serde_json::from_str(&ok(&["audit-params", "--variant", "proj", "--t", "128"], "")).unwrap();
    assert_eq!(v["formula_count"], 98_304);
    assert_eq!(v["reported_count_with_reserved_row"], 99_072);
    assert_eq!(v["formatted"], "99.1K");
    let v: Value =
        serde_json::from_str(&ok(&["audit-params", "--variant", "bert", "--vocab-size", "50265"], "")).unwrap();
    assert_eq!(v["formula_count"], 50_265 * 768);
    assert_eq!(v["has_reserved_row"], false);
}

#[test]
fn metrics_report() {
    let input = r#"{
        "baseline": {"name": "BERT-MLM", "score": 79.5, "total_params": 124600000,
                     "emb_params": 38600000, "pt_ms_per_sample": 24.9, "infer_ms_per_sample": 4.6},
        "models": [{"name": "Proj", "score": 79.1, "total_params": 86100000,
                    "emb_params": 99100, "pt_ms_per_sample": 10.6}]
    }"#;
    let v: Value = serde_json::from_str(&ok(&["metrics"], input)).unwrap();
    let r = &v["reports"][0];
    assert_eq!(r["display"]["prr_pct"], 99.5);
    assert_eq!(r["display"]["pcr_all_pct"], 30.9);
    assert_eq!(r["display"]["pcr_emb_pct"], 99.7);
    assert_eq!(r["display"]["poep_pct"], 0.1);
    assert!(r["infer_speedup"].is_null());
    assert!(v["tool_version"].is_string());
    assert_eq!(v["input"]["models"][0]["name"], "Proj");
}

#[test]
fn collision_reports() {
    let v: Value = serde_json::from_str(&ok(&["collisions", "--buckets", "1"], "a b c a\n")).unwrap();
    assert_eq!(v["bucket_histogram"], serde_json::json!([4]));
    assert_eq!(v["chi_square"], 0.0);

    let v: Value = serde_json::from_str(&ok(&["collisions", "--buckets", "8"], "solo\n")).unwrap();
    let hist: Vec<u64> = serde_json::from_value(v["bucket_histogram"].clone()).unwrap();
    assert_eq!(hist.iter().sum::<u64>(), 1);
    assert_eq!(hist.iter().filter(|&&c| c == 1).count(), 1);

    let families = fixture("inflection_families.txt");
    let out = ok(
        &["collisions", "--scheme", "lsh-sign", "--bits", "64", "--buckets", "16", "--input", s(&families), "--families", s(&families)],
        "",
    );
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["n_tokens"], 200);
    assert!(v["family_locality"]["margin"].as_f64().unwrap() > 0.0);
    assert_eq!(hashemb(&["collisions", "--buckets", "4"], "").code, 2);
}

#[test]
fn tiny_training_run_and_checkpoint_reuse() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        format!(
            r#"
seed = 1
steps = 6
batch_size = 2
seq_len = 12
log_every = 2
threads = 1
corpus = "{}"

[hash]
family = "lsh"
bits = 32

[embedding]
variant = "add"

[encoder]
layers = 1
d = 8
heads = 2
ff_dim = 16
max_seq_len = 16
"#,
            s(&fixture("toy_corpus.txt"))
        ),
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = ok(&["train-toy", "--config", s(&config), "--out-dir", s(&out_dir)], "");
    let report: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["steps"], 6);
    assert_eq!(report["loss_curve"].as_array().unwrap().len(), 3);
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(saved, report);

    let ck = out_dir.join("model.ckpt");
    let vocab = out_dir.join("vocab.tsv");
    let emb = ok(&["embed", "--checkpoint", s(&ck), "--vocab", s(&vocab)], "qqqzzz\nplay\n");
    assert_eq!(emb.lines().count(), 2);
    assert!(emb.lines().all(|l| l.split(',').count() == 8));
    assert_eq!(hashemb(&["embed", "--checkpoint", s(&ck), "--variant", "proj", "--vocab", s(&vocab)], "a\n").code, 1);

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "steps = 1\nmystery = 3\n").unwrap();
    assert_eq!(hashemb(&["train-toy", "--config", s(&bad)], "").code, 2);
}
