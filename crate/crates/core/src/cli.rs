//! Command implementations behind the `decoupled` binary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;

use crate::checkpoint::{load_lm, lm_to_checkpoint, AsrModel};
use crate::config::{AsrArch, Command, RunConfig};
use crate::data::{load_dataset, load_text_corpus, save_dataset, save_text_corpus, Utterance};
use crate::error::{Error, Result};
use crate::eval::{
    edit_counts, matched_pairs_test, run_adaptation_experiment, Benchmark, Condition, EditCounts, ExperimentReport,
    TestSet,
};
use crate::lm::{lm_finetune, lm_train};
use crate::search::{decode_all, DecodeOptions, Hypothesis};
use crate::train::EpochStats;
use crate::vocab::{fnv1a, Vocabulary};

pub const BUILD_ID: &str = concat!("decoupled-asr-v", env!("CARGO_PKG_VERSION"));

pub fn run(cfg: &RunConfig) -> Result<()> {
    match cfg.command {
        Command::GenData => cmd_gen_data(cfg),
        Command::TrainLm => cmd_train_lm(cfg),
        Command::TrainAsr => cmd_train_asr(cfg),
        Command::Decode => cmd_decode(cfg),
        Command::Score => cmd_score(cfg),
        Command::Experiment => cmd_experiment(cfg),
    }
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(format!("{:016x}", fnv1a(&bytes)))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

/// Provenance lines shared by every report, each prefixed with `prefix`.
pub fn provenance(cfg: &RunConfig, seed: Option<&str>, hashes: &[(String, String)], prefix: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{prefix}command = {}", cfg.command.name());
    let _ = writeln!(s, "{prefix}build = {BUILD_ID}");
    let _ = writeln!(s, "{prefix}seed = {}", seed.unwrap_or("-"));
    for (label, h) in hashes {
        let _ = writeln!(s, "{prefix}checkpoint {label} = {h}");
    }
    for line in cfg.to_text().lines() {
        let _ = writeln!(s, "{prefix}config {line}");
    }
    s
}

fn epoch_log(cfg: &RunConfig, seed: u64, hashes: &[(String, String)], hist: &[EpochStats]) -> String {
    let mut s = provenance(cfg, Some(&seed.to_string()), hashes, "# ");
    s.push_str("epoch\tmean_loss\tsteps\n");
    for e in hist {
        let _ = writeln!(s, "{}\t{:.6}\t{}", e.epoch, e.mean_loss, e.steps);
    }
    s
}

pub fn cmd_gen_data(cfg: &RunConfig) -> Result<()> {
    let out = PathBuf::from(cfg.raw("out_dir")?);
    let seed: u64 = cfg.get("seed")?;
    let bench = Benchmark::generate(&cfg.benchmark()?, cfg.sizes()?, seed)?;
    mkdir(&out)?;
    bench.vocab.save(&out.join("vocab.txt"))?;
    let mut hashes = vec![("vocab.txt".to_string(), format!("{:016x}", bench.vocab.hash()))];
    for d in [&bench.source, &bench.target] {
        let name = &d.spec.name;
        for (split, utts) in [("train", &d.train), ("dev", &d.dev), ("test", &d.test)] {
            let p = out.join(format!("{name}_{split}.dce"));
            save_dataset(&p, utts)?;
            hashes.push((format!("{name}_{split}.dce"), file_hash(&p)?));
        }
        let p = out.join(format!("{name}_text.txt"));
        save_text_corpus(&p, &bench.vocab, &d.text)?;
        hashes.push((format!("{name}_text.txt"), file_hash(&p)?));
    }
    write(&out.join("manifest.txt"), &provenance(cfg, Some(&seed.to_string()), &hashes, ""))?;
    info!("wrote benchmark to {}", out.display());
    Ok(())
}

pub fn cmd_train_lm(cfg: &RunConfig) -> Result<()> {
    let vocab = Vocabulary::load(cfg.required_path("vocab")?)?;
    let corpus = load_text_corpus(cfg.required_path("text")?, &vocab)?;
    let out = cfg.required_path("out")?;
    let seed: u64 = cfg.get("seed")?;
    let tag = cfg.raw("domain_tag")?;
    let (lm, hist, mut hashes) = match cfg.raw("mode")? {
        "source" => {
            let tc = cfg.train_config("lm_epochs", seed)?;
            let (lm, hist) = lm_train(&vocab, &corpus, &cfg.attention()?, &tc, tag)?;
            (lm, hist, Vec::new())
        }
        "finetune" => {
            let init_path = cfg.path("init")?.ok_or_else(|| Error::Missing("finetune mode needs 'init'".into()))?;
            let init = load_lm(init_path)?;
            let tc = cfg.train_config("finetune_epochs", seed)?;
            let (lm, hist) = lm_finetune(&init, &vocab, &corpus, &tc, tag)?;
            (lm, hist, vec![("init".to_string(), file_hash(init_path)?)])
        }
        other => return Err(Error::Config(format!("mode '{other}' is not source or finetune"))),
    };
    let ck = lm_to_checkpoint(&lm);
    ck.save(out)?;
    hashes.push(("out".to_string(), ck.hash_hex()));
    write(&with_suffix(out, ".log.tsv"), &epoch_log(cfg, seed, &hashes, &hist))
}

pub fn cmd_train_asr(cfg: &RunConfig) -> Result<()> {
    let vocab = Vocabulary::load(cfg.required_path("vocab")?)?;
    let data = load_dataset(cfg.required_path("train")?, "train")?;
    let first = data.first().ok_or_else(|| Error::Contract("training set is empty".into()))?;
    let d_feat = first.frames.cols();
    let arch = match cfg.asr_arch()? {
        AsrArch::Aed(c) => AsrArch::Aed(crate::aed::AedConfig { d_feat, ..c }),
        AsrArch::Transducer(c) => AsrArch::Transducer(crate::transducer::TransducerConfig { d_feat, ..c }),
    };
    let seed: u64 = cfg.get("seed")?;
    let mut hashes = Vec::new();
    let lm = match cfg.path("lm")? {
        Some(p) => {
            hashes.push(("lm".to_string(), file_hash(p)?));
            Some(load_lm(p)?)
        }
        None => None,
    };
    let out = cfg.required_path("out")?;
    let mut model = AsrModel::new(&arch, vocab, lm, seed)?;
    let hist = model.fit(&data, &cfg.train_config("epochs", seed)?)?;
    let ck = model.to_checkpoint();
    ck.save(out)?;
    hashes.push(("out".to_string(), ck.hash_hex()));
    write(&with_suffix(out, ".log.tsv"), &epoch_log(cfg, seed, &hashes, &hist))
}

/// Hypothesis TSV: `id, ref, hyp, s_att, s_ctc, s_lm, s_total`, sorted by id.
pub fn hypotheses_tsv(vocab: &Vocabulary, utts: &[Utterance], hyps: &[Hypothesis]) -> Result<String> {
    let mut rows: Vec<(&Utterance, &Hypothesis)> = utts.iter().zip(hyps).collect();
    rows.sort_by(|a, b| a.0.id.cmp(&b.0.id));
    let mut s = String::from("id\tref\thyp\ts_att\ts_ctc\ts_lm\ts_total\n");
    for (u, h) in rows {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            u.id,
            vocab.decode(&u.tokens)?,
            vocab.decode(&h.tokens)?,
            h.s_att,
            h.s_ctc,
            h.s_lm,
            h.s_total
        );
    }
    Ok(s)
}

pub fn cmd_decode(cfg: &RunConfig) -> Result<()> {
    let model_path = cfg.required_path("model")?;
    let mut model = AsrModel::load(model_path)?;
    let data = load_dataset(cfg.required_path("data")?, "test")?;
    let out = cfg.required_path("out")?;
    let mut hashes = vec![("model".to_string(), file_hash(model_path)?)];
    if let Some(p) = cfg.path("replace_ilm")? {
        if !model.is_decoupled() {
            return Err(Error::Contract("only decoupled models have a replaceable internal LM".into()));
        }
        let lm = load_lm(p)?;
        model.replace_internal_lm(lm)?;
        hashes.push(("replace_ilm".to_string(), file_hash(p)?));
    }
    let fusion = match cfg.path("sf_lm")? {
        Some(p) => {
            let lm = load_lm(p)?;
            crate::lm::check_replacement(model.vocab(), lm.cfg.d_model, None, &lm)?;
            hashes.push(("sf_lm".to_string(), file_hash(p)?));
            Some(lm)
        }
        None => None,
    };
    let beta = match cfg.raw("beta")? {
        "" => None,
        b => Some(b.parse().map_err(|_| Error::Config(format!("beta '{b}' is not a number")))?),
    };
    let opts = DecodeOptions {
        cfg: cfg.decode_config()?,
        beta,
        acoustic_only: false,
        fusion: fusion.as_ref(),
        mode: Some(cfg.transducer_mode()?),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.get("workers")?)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let xs: Vec<_> = data.iter().map(|u| &u.frames).collect();
    let hyps = pool.install(|| decode_all(model.as_ref(), &xs, &opts))?;
    write(out, &hypotheses_tsv(model.vocab(), &data, &hyps)?)?;
    hashes.push(("out".to_string(), file_hash(out)?));
    write(&with_suffix(out, ".meta"), &provenance(cfg, None, &hashes, ""))
}

/// `(id, ref, hyp)` rows of a hypothesis TSV.
pub fn read_hypotheses(path: &Path) -> Result<Vec<(String, String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    match lines.next() {
        Some(h) if h.starts_with("id\tref\thyp") => {}
        _ => return Err(bad("missing id/ref/hyp header".into())),
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() < 3 {
                return Err(bad(format!("row {} has {} fields", i + 1, f.len())));
            }
            Ok((f[0].to_string(), f[1].to_string(), f[2].to_string()))
        })
        .collect()
}

/// Per-utterance counts keyed by id; references come from `refs` when given.
fn score_rows(rows: &[(String, String, String)], refs: Option<&BTreeMap<String, String>>) -> Result<BTreeMap<String, EditCounts>> {
    let mut out = BTreeMap::new();
    for (id, r, h) in rows {
        let reference = match refs {
            Some(m) => m
                .get(id)
                .ok_or_else(|| Error::Contract(format!("utterance {id} is not in the reference set")))?,
            None => r,
        };
        let rv: Vec<&str> = reference.split_whitespace().collect();
        let hv: Vec<&str> = h.split_whitespace().collect();
        if out.insert(id.clone(), edit_counts(&rv, &hv)).is_some() {
            return Err(Error::Contract(format!("utterance {id} appears twice")));
        }
    }
    Ok(out)
}

pub fn cmd_score(cfg: &RunConfig) -> Result<()> {
    let hyp_path = cfg.required_path("hyps")?;
    let out = cfg.required_path("out")?;
    let mut hashes = vec![("hyps".to_string(), file_hash(hyp_path)?)];
    let refs = match cfg.path("refs")? {
        Some(p) => {
            let vocab_path = cfg
                .path("vocab")?
                .ok_or_else(|| Error::Missing("scoring against a dataset needs 'vocab'".into()))?;
            let vocab = Vocabulary::load(vocab_path)?;
            hashes.push(("refs".to_string(), file_hash(p)?));
            let data = load_dataset(p, "refs")?;
            let map = data
                .iter()
                .map(|u| Ok((u.id.clone(), vocab.decode(&u.tokens)?)))
                .collect::<Result<BTreeMap<_, _>>>()?;
            Some(map)
        }
        None => None,
    };
    let rows = read_hypotheses(hyp_path)?;
    let a = score_rows(&rows, refs.as_ref())?;
    let total = a.values().fold(EditCounts::default(), |x, &y| x + y);
    let mut tsv = provenance(cfg, None, &hashes, "# ");
    tsv.push_str("id\tsub\tdel\tins\tref_len\n");
    for (id, e) in &a {
        let _ = writeln!(tsv, "{id}\t{}\t{}\t{}\t{}", e.sub, e.del, e.ins, e.n);
    }
    let wer = total.errors() as f64 / total.n.max(1) as f64;
    let _ = writeln!(tsv, "#corpus\t{}\t{}\t{}\t{}\twer={:.6}", total.sub, total.del, total.ins, total.n, wer);
    let mut md = String::from("# Score report\n\n```\n");
    md.push_str(&provenance(cfg, None, &hashes, ""));
    md.push_str("```\n\n| system | S | D | I | N | WER % |\n|---|---|---|---|---|---|\n");
    let _ = writeln!(
        md,
        "| {} | {} | {} | {} | {} | {:.2} |",
        hyp_path.display(),
        total.sub,
        total.del,
        total.ins,
        total.n,
        100.0 * wer
    );
    if let Some(p) = cfg.path("pair")? {
        let other = read_hypotheses(p)?;
        let b = score_rows(&other, refs.as_ref())?;
        if a.keys().ne(b.keys()) {
            return Err(Error::Contract("paired hypothesis files cover different utterances".into()));
        }
        let ea: Vec<f64> = a.values().map(|e| e.errors() as f64).collect();
        let eb: Vec<f64> = b.values().map(|e| e.errors() as f64).collect();
        let t = matched_pairs_test(&ea, &eb)?;
        let tb = b.values().fold(EditCounts::default(), |x, &y| x + y);
        let wb = tb.errors() as f64 / tb.n.max(1) as f64;
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} | {:.2} |",
            p.display(),
            tb.sub,
            tb.del,
            tb.ins,
            tb.n,
            100.0 * wb
        );
        let _ = writeln!(
            md,
            "\nMatched pairs over {} utterances: Z = {:.4}, p = {:.6}{}",
            t.n,
            t.z,
            t.p_value,
            if t.degenerate { " (zero variance)" } else { "" }
        );
        let _ = writeln!(tsv, "#pair\tz={:.6}\tp={:.6}\tdegenerate={}\twer_other={:.6}", t.z, t.p_value, t.degenerate, wb);
    }
    write(&with_suffix(out, ".tsv"), &tsv)?;
    write(&with_suffix(out, ".md"), &md)
}

/// Markdown summary: WER pooled over seeds per family, test set and condition.
pub fn summary_markdown(report: &ExperimentReport) -> String {
    let mut keys: Vec<(String, TestSet, Condition, bool)> = Vec::new();
    for r in &report.rows {
        let k = (r.family.clone(), r.test_set, r.condition, r.fusion);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut s = String::from("| family | test set | condition | fusion | pooled WER % | seeds |\n|---|---|---|---|---|---|\n");
    for (fam, ts, c, f) in keys {
        let seeds = report.across_seeds(&fam, ts, c, f).len();
        let (total, _) = report.pooled(&fam, ts, c, f).expect("cell exists");
        let _ = writeln!(
            s,
            "| {fam} | {} | {} | {} | {:.2} | {} |",
            ts.name(),
            c.name(),
            if f { "yes" } else { "no" },
            100.0 * total.wer(),
            seeds
        );
    }
    s
}

pub fn cmd_experiment(cfg: &RunConfig) -> Result<()> {
    let exp = cfg.experiment()?;
    let out = PathBuf::from(cfg.raw("out_dir")?);
    let models = out.join("models");
    mkdir(&models)?;
    let report = run_adaptation_experiment(&exp, Some(&models))?;
    write_experiment_report(cfg, &report, &out)
}

/// Writes `report.tsv` and `report.md` into `out`.
pub fn write_experiment_report(cfg: &RunConfig, report: &ExperimentReport, out: &Path) -> Result<()> {
    let seeds = cfg.raw("seeds")?;
    let mut tsv = provenance(cfg, Some(seeds), &report.checkpoints, "# ");
    tsv.push_str(&report.rows_tsv());
    let mut md = String::from("# Adaptation experiment\n\n```\n");
    md.push_str(&provenance(cfg, Some(seeds), &report.checkpoints, ""));
    md.push_str("```\n\n## Pooled over seeds\n\n");
    md.push_str(&summary_markdown(report));
    md.push_str("\n## Per seed\n\n");
    md.push_str(&report.rows_markdown());
    mkdir(out)?;
    write(&out.join("report.tsv"), &tsv)?;
    write(&out.join("report.md"), &md)
}
