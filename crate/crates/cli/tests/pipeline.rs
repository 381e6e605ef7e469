use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL_MODEL: &[&str] = &["--d-emb", "8", "--d-h", "8", "--d-s", "8", "--d-o", "8", "--d-attn", "8"];

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nmtvocab"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A temp dir with a small synthetic corpus and a config pointing at it.
fn workspace(kind: &str, sentences: &str) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &["synth", "--kind", kind, "--sentences", sentences, "--test", "20", "--out-dir", "data"],
    );
    fs::write(
        dir.path().join("pipeline.conf"),
        "# test corpus\nsrc = data/train.src\ntgt = data/train.tgt\nwork_dir = work\nbatch_size = 5\n",
    )
    .unwrap();
    dir
}

fn with(base: &[&str], extra: &[&str]) -> Vec<String> {
    base.iter().chain(extra).map(|s| s.to_string()).collect()
}

fn args(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

fn prepare(dir: &Path) {
    for stage in ["align", "lexicon", "phrases"] {
        ok(dir, &[stage, "--config", "pipeline.conf"]);
    }
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        out.insert(p.clone(), fs::read(&p).unwrap());
    }
    out
}

fn meta(path: &Path, key: &str) -> String {
    let text = fs::read_to_string(path).unwrap();
    let prefix = format!("meta {key} ");
    text.lines()
        .find_map(|l| l.strip_prefix(&prefix))
        .unwrap_or_else(|| panic!("{} has no {key}", path.display()))
        .to_string()
}

#[test]
fn preparation_stages_are_byte_identical_across_runs() {
    let dir = workspace("ambiguous", "100");
    prepare(dir.path());
    let work = dir.path().join("work");
    let first = snapshot(&work);
    for name in ["src.vocab", "tgt.vocab", "ttable.s2t.tsv", "ttable.t2s.tsv", "aligned.gdfa", "dict.tsv", "phrases.txt"] {
        assert!(first.contains_key(&work.join(name)), "missing {name}");
    }
    prepare(dir.path());
    assert_eq!(snapshot(&work), first);

    let header = String::from_utf8(first[&work.join("dict.tsv")].clone()).unwrap();
    let header = header.lines().next().unwrap();
    assert!(header.starts_with("# nmtvocab stage=lexicon hash="), "{header}");
    assert!(header.contains("em_iters=5"), "{header}");
}

#[test]
fn em_iterations_change_the_ttable_and_the_log() {
    let dir = workspace("ambiguous", "100");
    let five = ok(dir.path(), &["align", "--config", "pipeline.conf"]);
    let t5 = fs::read(dir.path().join("work/ttable.s2t.tsv")).unwrap();
    let one = ok(dir.path(), &["align", "--config", "pipeline.conf", "--em-iters", "1"]);
    let t1 = fs::read(dir.path().join("work/ttable.s2t.tsv")).unwrap();
    assert_ne!(t1, t5);
    let count = |s: &str| s.lines().filter(|l| l.starts_with("em s2t")).count();
    assert_eq!(count(&five), 6);
    assert_eq!(count(&one), 2);
}

#[test]
fn phrases_before_align_names_the_missing_stage() {
    let dir = workspace("ambiguous", "60");
    let out = run(dir.path(), &["phrases", "--config", "pipeline.conf"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nmtvocab align"), "{}", stderr(&out));
}

#[test]
fn stale_upstream_hash_is_refused_unless_forced() {
    let dir = workspace("ambiguous", "60");
    ok(dir.path(), &["align", "--config", "pipeline.conf"]);
    let out = run(dir.path(), &["lexicon", "--config", "pipeline.conf", "--em-iters", "2"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--force"), "{}", stderr(&out));
    ok(dir.path(), &["lexicon", "--config", "pipeline.conf", "--em-iters", "2", "--force"]);
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = workspace("ambiguous", "40");
    assert_eq!(code(&run(dir.path(), &["align", "--no-such-flag", "1"])), 1);
    assert_eq!(code(&run(dir.path(), &["align", "--config", "pipeline.conf", "--em-iters", "many"])), 1);
    assert_eq!(code(&run(dir.path(), &["align"])), 1);
    fs::write(dir.path().join("bad.conf"), "em_iterz = 3\n").unwrap();
    assert_eq!(code(&run(dir.path(), &["align", "--config", "bad.conf"])), 1);
    assert_eq!(code(&run(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&run(dir.path(), &["--help"])), 0);
}

fn stats_table(out: &str) -> Vec<(String, String, Vec<f64>)> {
    out.lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("config"))
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            (f[0].to_string(), f[1].to_string(), f[2..].iter().map(|v| v.parse().unwrap()).collect())
        })
        .collect()
}

#[test]
fn stats_rows_cover_every_configuration() {
    let dir = workspace("ambiguous", "120");
    prepare(dir.path());
    let train = ok(dir.path(), &["stats", "--config", "pipeline.conf", "--sweep", "1,2,5", "--stats-output", "work/stats.txt"]);
    let rows = stats_table(&train);
    assert_eq!(rows.len(), 1 + 3 * 3);
    for (label, n, cols) in &rows {
        assert_eq!(cols[0], 1.0, "{label} {n}: word coverage in train mode");
    }
    let saved = fs::read_to_string(dir.path().join("work/stats.txt")).unwrap();
    assert!(saved.starts_with("# nmtvocab stage=stats"));

    let decode = ok(
        dir.path(),
        &[
            "stats", "--config", "pipeline.conf", "--sweep", "1,2,5", "--mode", "decode",
            "--input", "data/test.src", "--references", "data/test.tgt", "--common-top-n", "20",
        ],
    );
    let rows = stats_table(&decode);
    let get = |label: &str, n: &str| rows.iter().find(|r| r.0 == label && r.1 == n).unwrap().2.clone();
    let p = get("P", "-");
    for n in ["1", "2", "5"] {
        let (d, dp, dpt) = (get("D", n), get("D+P", n), get("D+P+T", n));
        for col in [0, 1, 2] {
            assert!(dp[col] >= d[col] && dp[col] >= p[col], "D+P at {n}");
            assert!(dpt[col] >= dp[col], "D+P+T at {n}");
        }
    }
    assert!(get("D", "5")[0] >= get("D", "1")[0]);
}

#[test]
fn train_and_decode_round_trip() {
    let dir = workspace("ambiguous", "80");
    prepare(dir.path());
    let train_args = with(&["train", "--config", "pipeline.conf", "--epochs", "2"], SMALL_MODEL);
    let log = ok(dir.path(), &args(&train_args));
    assert_eq!(log.lines().filter(|l| l.starts_with("epoch ")).count(), 2);
    for f in ["model.ckpt", "model.ckpt.epoch1", "model.ckpt.epoch2", "train.log"] {
        assert!(dir.path().join("work").join(f).exists(), "missing {f}");
    }
    let final_ck = fs::read(dir.path().join("work/model.ckpt")).unwrap();
    assert_eq!(final_ck, fs::read(dir.path().join("work/model.ckpt.epoch2")).unwrap());

    let decode = |extra: &[&str]| {
        let a = with(&["decode", "--config", "pipeline.conf", "--input", "data/test.src", "--beam", "3"], extra);
        ok(dir.path(), &args(&a))
    };
    let plain = decode(&[]);
    assert!(!plain.contains("BLEU"), "{plain}");
    let lines = fs::read_to_string(dir.path().join("work/output.txt")).unwrap();
    assert_eq!(lines.lines().count(), 20);

    let scored = decode(&["--references", "data/test.tgt", "--attention-dump", "work/attn.txt"]);
    assert!(scored.lines().any(|l| l.starts_with("BLEU = ")), "{scored}");
    assert!(dir.path().join("work/attn.txt").exists());

    let avg = |s: &str| -> f64 {
        let f: Vec<&str> = s.split_whitespace().collect();
        let k = f.iter().position(|&w| w == "avg_vocab").unwrap();
        f[k + 1].parse().unwrap()
    };
    let small = decode(&["--common-top-n", "5"]);
    let large = decode(&["--common-top-n", "2000"]);
    assert!(avg(&small) < avg(&large), "{small} vs {large}");
}

#[test]
fn decode_refuses_a_checkpoint_trained_on_other_vocabularies() {
    let dir = workspace("ambiguous", "60");
    prepare(dir.path());
    let train_args = with(&["train", "--config", "pipeline.conf", "--epochs", "1"], SMALL_MODEL);
    ok(dir.path(), &args(&train_args));
    ok(dir.path(), &["align", "--config", "pipeline.conf", "--tgt-vocab-size", "30"]);
    let out = run(dir.path(), &["decode", "--config", "pipeline.conf", "--input", "data/test.src", "--tgt-vocab-size", "30"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("changed since"), "{}", stderr(&out));
}

#[test]
fn frozen_embeddings_and_seeds() {
    let dir = workspace("ambiguous", "60");
    prepare(dir.path());
    let digests = |extra: &[&str], epochs: usize| -> Vec<String> {
        let e = epochs.to_string();
        let base = with(&["train", "--config", "pipeline.conf", "--epochs", &e], SMALL_MODEL);
        let a = with(&args(&base), extra);
        ok(dir.path(), &args(&a));
        (1..=epochs)
            .map(|k| meta(&dir.path().join(format!("work/model.ckpt.epoch{k}")), "embedding_digest"))
            .collect()
    };
    let frozen = digests(&["--freeze-embeddings-after", "2"], 4);
    assert_ne!(frozen[0], frozen[1]);
    assert_eq!(frozen[1], frozen[2]);
    assert_eq!(frozen[2], frozen[3]);

    let seeded = |seed: &str| {
        let a = with(&["train", "--config", "pipeline.conf", "--epochs", "1", "--model", "work/s.ckpt", "--seed", seed], SMALL_MODEL);
        ok(dir.path(), &args(&a));
        fs::read(dir.path().join("work/s.ckpt")).unwrap()
    };
    let a = seeded("3");
    assert_eq!(a, seeded("3"));
    assert_ne!(a, seeded("4"));
}

#[test]
fn copy_corpus_loss_falls_below_a_fifth() {
    // Measured once: epoch 30 reached 3.5% of the epoch-1 loss.
    let dir = workspace("copy", "520");
    prepare(dir.path());
    let a = with(
        &["train", "--config", "pipeline.conf", "--epochs", "30", "--common-top-n", "50"],
        &["--d-emb", "32", "--d-h", "32", "--d-s", "32", "--d-o", "32", "--d-attn", "32"],
    );
    let log = ok(dir.path(), &args(&a));
    let losses: Vec<f64> = log
        .lines()
        .filter_map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            (f.first() == Some(&"epoch")).then(|| f[3].parse().unwrap())
        })
        .collect();
    assert_eq!(losses.len(), 30);
    let (first, last) = (losses[0], losses[29]);
    assert!(last < 0.2 * first, "epoch 1 loss {first}, epoch 30 loss {last}");
}

#[test]
fn bench_reports_every_size_and_full() {
    let dir = workspace("ambiguous", "40");
    let out = ok(
        dir.path(),
        &[
            "bench", "--bench-vocab", "3000", "--bench-sizes", "100,1000", "--bench-runs", "1", "--bench-steps", "3",
            "--bench-pairs", "6", "--d-emb", "8", "--d-h", "8", "--d-s", "8", "--d-o", "8", "--d-attn", "8",
        ],
    );
    let rows: Vec<&str> = out.lines().filter(|l| !l.starts_with('#') && !l.trim_start().starts_with("size")).collect();
    assert_eq!(rows.len(), 3, "{out}");
    assert_eq!(rows[2].split_whitespace().next(), Some("full"));
    let speedup: f64 = rows[2].split_whitespace().nth(2).unwrap().parse().unwrap();
    assert_eq!(speedup, 1.0);
}
