use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

const TINY: &[&str] = &["--d-model", "8", "--heads", "2", "--d-ff", "8", "--n-layers", "1", "--batch-size", "8"];

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_decoupled"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn decoupled")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "decoupled {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn fails_with(args: &[&str], kind: &str) {
    let out = run(args);
    assert!(!out.status.success(), "decoupled {args:?} should fail");
    let err = String::from_utf8_lossy(&out.stderr);
    let line = err.lines().last().unwrap_or_default();
    assert!(line.starts_with(&format!("error: {kind}:")), "expected {kind}, got: {err}");
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn p(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

fn train_lm(data: &Path, text: &str, out: &Path, seed: &str) {
    let vocab = data.join("vocab.txt");
    let text = data.join(text);
    let mut args = vec!["train-lm", "--vocab", s(&vocab), "--text", s(&text), "--out", s(out), "--lm-epochs", "1", "--seed", seed];
    args.extend_from_slice(TINY);
    ok(&args);
}

/// Benchmark, two LMs, one decoupled AED and one LM on a different vocabulary.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let data = root.join("data");
        let sizes = ["--n-train", "16", "--n-dev", "0", "--n-test", "6", "--n-text", "40"];
        let mut args = vec!["gen-data", "--out-dir", s(&data)];
        args.extend_from_slice(&sizes);
        ok(&args);

        let (vocab, src_lm, tgt_lm, aed) = (data.join("vocab.txt"), root.join("src.lm"), root.join("tgt.lm"), root.join("aed.ck"));
        let (tgt_text, train) = (data.join("target_text.txt"), data.join("source_train.dce"));
        train_lm(&data, "source_text.txt", &src_lm, "0");
        ok(&[
            "train-lm",
            "--mode",
            "finetune",
            "--init",
            s(&src_lm),
            "--vocab",
            s(&vocab),
            "--text",
            s(&tgt_text),
            "--out",
            s(&tgt_lm),
            "--finetune-epochs",
            "1",
            "--domain-tag",
            "target",
        ]);

        let mut args = vec![
            "train-asr",
            "--vocab",
            s(&vocab),
            "--train",
            s(&train),
            "--lm",
            s(&src_lm),
            "--out",
            s(&aed),
            "--epochs",
            "1",
        ];
        args.extend_from_slice(TINY);
        ok(&args);

        let other = root.join("other");
        let mut args = vec!["gen-data", "--out-dir", s(&other), "--n-content", "16", "--n-pairs", "4"];
        args.extend_from_slice(&sizes);
        ok(&args);
        train_lm(&other, "source_text.txt", &root.join("other.lm"), "0");

        Fixture { _dir: dir, root }
    })
}

fn decode(f: &Fixture, out: &str, extra: &[&str]) -> String {
    let out = f.p(out);
    let model = f.p("aed.ck");
    let data = f.p("data/target_test.dce");
    let mut args = vec!["decode", "--model", s(&model), "--data", s(&data), "--out", s(&out), "--beam", "2"];
    args.extend_from_slice(extra);
    ok(&args);
    fs::read_to_string(out).unwrap()
}

#[test]
fn gen_data_writes_every_split() {
    let f = fixture();
    for d in ["source", "target"] {
        for split in ["train", "dev", "test"] {
            assert!(f.p(&format!("data/{d}_{split}.dce")).exists());
        }
        assert!(f.p(&format!("data/{d}_text.txt")).exists());
    }
    let manifest = fs::read_to_string(f.p("data/manifest.txt")).unwrap();
    assert!(manifest.contains("vocab.txt"));
}

#[test]
fn gen_data_is_deterministic() {
    let f = fixture();
    let again = f.p("data_again");
    ok(&["gen-data", "--out-dir", s(&again), "--n-train", "16", "--n-dev", "0", "--n-test", "6", "--n-text", "40"]);
    for name in ["vocab.txt", "source_train.dce", "target_test.dce", "target_text.txt"] {
        assert_eq!(fs::read(f.p("data").join(name)).unwrap(), fs::read(again.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn decode_writes_sorted_tsv_and_meta() {
    let f = fixture();
    let tsv = decode(f, "plain.tsv", &[]);
    let mut lines = tsv.lines();
    assert!(lines.next().unwrap().starts_with("id\tref\thyp"));
    let ids: Vec<&str> = lines.map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(ids.len(), 6);
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
    assert!(f.p("plain.tsv.meta").exists());
}

#[test]
fn zero_fusion_weight_matches_no_fusion() {
    let f = fixture();
    let plain = decode(f, "nofusion.tsv", &[]);
    let lm = f.p("tgt.lm");
    let fused = decode(f, "fusion0.tsv", &["--sf-lm", s(&lm), "--sf-weight", "0"]);
    assert_eq!(plain, fused);
}

#[test]
fn replacing_with_the_same_lm_changes_nothing() {
    let f = fixture();
    let plain = decode(f, "noswap.tsv", &[]);
    let lm = f.p("src.lm");
    let swapped = decode(f, "sameswap.tsv", &["--replace-ilm", s(&lm)]);
    assert_eq!(plain, swapped);
}

#[test]
fn replacing_with_a_target_lm_decodes() {
    let f = fixture();
    let lm = f.p("tgt.lm");
    let tsv = decode(f, "tgtswap.tsv", &["--replace-ilm", s(&lm)]);
    assert_eq!(tsv.lines().count(), 7);
}

#[test]
fn vocabulary_mismatch_is_rejected() {
    let f = fixture();
    let out = f.p("bad.tsv");
    fails_with(
        &[
            "decode",
            "--model",
            s(&f.p("aed.ck")),
            "--data",
            s(&f.p("data/target_test.dce")),
            "--out",
            s(&out),
            "--replace-ilm",
            s(&f.p("other.lm")),
        ],
        "incompatible-lm",
    );
}

#[test]
fn corrupted_checkpoint_fails_the_checksum() {
    let f = fixture();
    let mut bytes = fs::read(f.p("src.lm")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    let bad = f.p("corrupt.lm");
    fs::write(&bad, bytes).unwrap();
    fails_with(
        &[
            "decode",
            "--model",
            s(&f.p("aed.ck")),
            "--data",
            s(&f.p("data/target_test.dce")),
            "--out",
            s(&f.p("corrupt.tsv")),
            "--replace-ilm",
            s(&bad),
        ],
        "crc-mismatch",
    );
}

#[test]
fn missing_file_and_unknown_key_fail_cleanly() {
    let f = fixture();
    fails_with(&["decode", "--model", s(&f.p("nope.ck")), "--data", "x", "--out", "y"], "file-not-found");
    fails_with(&["gen-data", "--no-such-key", "1"], "config");
    fails_with(&["decode", "--n-train", "5"], "config");
    fails_with(&["gen-data", "--set", "seed"], "config");
}

#[test]
fn config_file_and_overrides_layer() {
    let f = fixture();
    let cfg = f.p("layer.cfg");
    fs::write(&cfg, "# tiny\nn_train = 4\nn_dev = 0\nn_test = 2\nn_text = 10\nseed = 3\n").unwrap();
    let a = f.p("layer_a");
    let b = f.p("layer_b");
    ok(&["gen-data", "--config", s(&cfg), "--out-dir", s(&a)]);
    ok(&["gen-data", "--config", s(&cfg), "--out-dir", s(&b), "--set", "seed=4"]);
    assert_ne!(fs::read(a.join("source_train.dce")).unwrap(), fs::read(b.join("source_train.dce")).unwrap());
    let c = f.p("layer_c");
    ok(&["gen-data", "--out-dir", s(&c), "--n-train", "4", "--n-dev", "0", "--n-test", "2", "--n-text", "10", "--seed=3"]);
    assert_eq!(fs::read(a.join("source_train.dce")).unwrap(), fs::read(c.join("source_train.dce")).unwrap());
}

#[test]
fn score_reports_wer_and_matched_pairs() {
    let f = fixture();
    decode(f, "score_a.tsv", &[]);
    let lm = f.p("tgt.lm");
    decode(f, "score_b.tsv", &["--replace-ilm", s(&lm)]);
    let out = f.p("score");
    ok(&[
        "score",
        "--hyps",
        s(&f.p("score_a.tsv")),
        "--pair",
        s(&f.p("score_b.tsv")),
        "--refs",
        s(&f.p("data/target_test.dce")),
        "--vocab",
        s(&f.p("data/vocab.txt")),
        "--out",
        s(&out),
    ]);
    let tsv = fs::read_to_string(f.p("score.tsv")).unwrap();
    assert!(tsv.lines().any(|l| l.starts_with("#corpus") && l.contains("wer=")));
    assert!(tsv.lines().any(|l| l.starts_with("#pair") && l.contains("p=")));
    let md = fs::read_to_string(f.p("score.md")).unwrap();
    assert!(md.contains("Matched pairs over 6 utterances"));
}

#[test]
fn scoring_a_perfect_tsv_gives_zero_wer() {
    let f = fixture();
    let hyp = f.p("perfect_hyps.tsv");
    fs::write(&hyp, "id\tref\thyp\nu1\ta b c\ta b c\nu2\td e\td e\n").unwrap();
    ok(&["score", "--hyps", s(&hyp), "--out", s(&f.p("perfect"))]);
    let tsv = fs::read_to_string(f.p("perfect.tsv")).unwrap();
    assert!(tsv.contains("wer=0.000000"), "{tsv}");
}

#[test]
fn keys_lists_every_subcommand_key() {
    let out = run(&["keys"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for k in ["seed", "replace_ilm", "sf_weight", "families", "beta"] {
        assert!(text.lines().any(|l| l.starts_with(k)), "{k}");
    }
}
