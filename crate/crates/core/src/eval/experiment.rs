use std::fmt::Write as _;
use std::path::Path;

use log::info;

use super::{edit_counts, matched_pairs_test, Benchmark, BenchmarkSpec, EditCounts, SplitSizes};
use crate::checkpoint::{lm_to_checkpoint, AsrModel};
use crate::config::AsrArch;
use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::lm::{lm_finetune, lm_train, LanguageModel};
use crate::nn::AttentionConfig;
use crate::search::{decode_all, DecodeConfig, DecodeOptions, TransducerMode};
use crate::train::TrainConfig;

/// Decoding condition of one report row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Condition {
    /// LM logits dropped (`β = 0` for AED, `logits^AC` for transducers).
    AcousticOnly,
    SourceIlm,
    TargetIlm,
    /// A standard model, which has no separable internal LM.
    Baseline,
}

impl Condition {
    pub fn name(self) -> &'static str {
        match self {
            Condition::AcousticOnly => "acoustic-only",
            Condition::SourceIlm => "source-ilm",
            Condition::TargetIlm => "target-ilm",
            Condition::Baseline => "baseline",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TestSet {
    /// Source-domain test set.
    Intra,
    /// Target-domain test set.
    Cross,
}

impl TestSet {
    pub fn name(self) -> &'static str {
        match self {
            TestSet::Intra => "intra",
            TestSet::Cross => "cross",
        }
    }
}

/// Named model family with its architecture.
#[derive(Clone, Debug)]
pub struct Family {
    pub name: String,
    pub arch: AsrArch,
}

impl Family {
    pub fn is_decoupled(&self) -> bool {
        match &self.arch {
            AsrArch::Aed(c) => c.variant == crate::aed::AedVariant::Decoupled,
            AsrArch::Transducer(c) => c.variant == crate::transducer::TransducerVariant::Decoupled,
        }
    }

    /// Conditions decoded for this family, without fusion.
    pub fn conditions(&self) -> Vec<Condition> {
        if self.is_decoupled() {
            vec![Condition::AcousticOnly, Condition::SourceIlm, Condition::TargetIlm]
        } else {
            vec![Condition::Baseline]
        }
    }

    /// The condition p-values are computed against.
    pub fn reference(&self) -> Condition {
        if self.is_decoupled() {
            Condition::SourceIlm
        } else {
            Condition::Baseline
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub bench: BenchmarkSpec,
    pub sizes: SplitSizes,
    pub seeds: Vec<u64>,
    pub families: Vec<Family>,
    pub lm_attn: AttentionConfig,
    /// Epoch counts and optimiser settings; seeds are replaced per run.
    pub lm_train: TrainConfig,
    pub lm_finetune: TrainConfig,
    pub asr_train: TrainConfig,
    pub decode: DecodeConfig,
    pub transducer_mode: TransducerMode,
    pub fusion_weight: f64,
    pub workers: usize,
}

/// One decoded condition.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub seed: u64,
    pub family: String,
    pub test_set: TestSet,
    pub condition: Condition,
    pub fusion: bool,
    pub counts: EditCounts,
    /// Per-utterance error counts, in test-set order.
    pub utt_errors: Vec<f64>,
    /// Matched-pairs test against the family's reference condition.
    pub z: Option<f64>,
    pub p_value: Option<f64>,
}

impl ReportRow {
    pub fn wer(&self) -> f64 {
        self.counts.errors() as f64 / self.counts.n.max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    /// `(label, hash)` of every trained model, in training order.
    pub checkpoints: Vec<(String, String)>,
}

impl ExperimentReport {
    pub fn find(&self, seed: u64, family: &str, test_set: TestSet, condition: Condition, fusion: bool) -> Option<&ReportRow> {
        self.rows.iter().find(|r| {
            r.seed == seed && r.family == family && r.test_set == test_set && r.condition == condition && r.fusion == fusion
        })
    }

    /// Rows of one cell across all seeds, in seed order.
    pub fn across_seeds(&self, family: &str, test_set: TestSet, condition: Condition, fusion: bool) -> Vec<&ReportRow> {
        self.rows
            .iter()
            .filter(|r| r.family == family && r.test_set == test_set && r.condition == condition && r.fusion == fusion)
            .collect()
    }

    /// Summed counts and concatenated per-utterance errors of one cell over
    /// all seeds; `None` when the cell was not decoded.
    pub fn pooled(&self, family: &str, test_set: TestSet, condition: Condition, fusion: bool) -> Option<(EditCounts, Vec<f64>)> {
        let rows = self.across_seeds(family, test_set, condition, fusion);
        if rows.is_empty() {
            return None;
        }
        let mut total = EditCounts::default();
        let mut errs = Vec::new();
        for r in rows {
            total = total + r.counts;
            errs.extend_from_slice(&r.utt_errors);
        }
        Some((total, errs))
    }

    /// Tab-separated rows with a header line.
    pub fn rows_tsv(&self) -> String {
        let mut s = String::from("seed\tfamily\ttest_set\tcondition\tfusion\twer\tsub\tdel\tins\tref_len\tz\tp\n");
        for r in &self.rows {
            let opt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.6}"));
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{:.6}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.seed,
                r.family,
                r.test_set.name(),
                r.condition.name(),
                u8::from(r.fusion),
                r.wer(),
                r.counts.sub,
                r.counts.del,
                r.counts.ins,
                r.counts.n,
                opt(r.z),
                opt(r.p_value)
            );
        }
        s
    }

    /// Markdown table, WER in percent.
    pub fn rows_markdown(&self) -> String {
        let mut s = String::from("| seed | family | test set | condition | fusion | WER % | S | D | I | N | p vs ref |\n");
        s.push_str("|---|---|---|---|---|---|---|---|---|---|---|\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} | {:.2} | {} | {} | {} | {} | {} |",
                r.seed,
                r.family,
                r.test_set.name(),
                r.condition.name(),
                if r.fusion { "yes" } else { "no" },
                100.0 * r.wer(),
                r.counts.sub,
                r.counts.del,
                r.counts.ins,
                r.counts.n,
                r.p_value.map_or("-".to_string(), |p| format!("{p:.4}"))
            );
        }
        s
    }
}

fn with_seed(tc: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..tc.clone() }
}

fn decode_rows(
    model: &AsrModel,
    test: &[Utterance],
    opts: &DecodeOptions<'_, f32>,
) -> Result<(EditCounts, Vec<f64>)> {
    let xs: Vec<_> = test.iter().map(|u| &u.frames).collect();
    let hyps = decode_all(model.as_ref(), &xs, opts)?;
    let mut total = EditCounts::default();
    let mut per = Vec::with_capacity(test.len());
    for (u, h) in test.iter().zip(&hyps) {
        let e = edit_counts(&u.tokens, &h.tokens);
        per.push(e.errors() as f64);
        total = total + e;
    }
    Ok((total, per))
}

struct SeedModels {
    source_lm: LanguageModel,
    target_lm: LanguageModel,
}

fn train_lms(cfg: &ExperimentConfig, bench: &Benchmark, seed: u64) -> Result<SeedModels> {
    let (source_lm, _) = lm_train(&bench.vocab, &bench.source.text, &cfg.lm_attn, &with_seed(&cfg.lm_train, seed), "source")?;
    let (target_lm, _) = lm_finetune(&source_lm, &bench.vocab, &bench.target.text, &with_seed(&cfg.lm_finetune, seed), "target")?;
    Ok(SeedModels { source_lm, target_lm })
}

/// Decodes every configured family under every condition on both test sets.
///
/// Per seed: regenerate the benchmark, train a source LM and fine-tune it on
/// target text, train each family on source audio with the source LM, then
/// decode. Checkpoints are written to `save_dir` when given.
pub fn run_adaptation_experiment(cfg: &ExperimentConfig, save_dir: Option<&Path>) -> Result<ExperimentReport> {
    if cfg.seeds.is_empty() || cfg.families.is_empty() {
        return Err(Error::Config("experiment needs at least one seed and one family".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut rows = Vec::new();
    let mut checkpoints = Vec::new();
    let save = |name: String, ck: crate::checkpoint::Checkpoint, checkpoints: &mut Vec<(String, String)>| -> Result<()> {
        checkpoints.push((name.clone(), ck.hash_hex()));
        if let Some(dir) = save_dir {
            ck.save(&dir.join(format!("{name}.dcpl")))?;
        }
        Ok(())
    };
    for &seed in &cfg.seeds {
        let bench = Benchmark::generate(&cfg.bench, cfg.sizes, seed)?;
        if bench.source.train.is_empty() || bench.source.test.is_empty() || bench.target.test.is_empty() {
            return Err(Error::Config("experiment needs train and test utterances".into()));
        }
        info!("seed {seed}: training LMs");
        let lms = pool.install(|| train_lms(cfg, &bench, seed))?;
        save(format!("seed{seed}_source_lm"), lm_to_checkpoint(&lms.source_lm), &mut checkpoints)?;
        save(format!("seed{seed}_target_lm"), lm_to_checkpoint(&lms.target_lm), &mut checkpoints)?;
        for fam in &cfg.families {
            info!("seed {seed}: training {}", fam.name);
            let lm = fam.is_decoupled().then(|| lms.source_lm.clone());
            let lm = match (&fam.arch, lm) {
                (AsrArch::Aed(c), None) if c.variant == crate::aed::AedVariant::Preformer => Some(lms.source_lm.clone()),
                (_, lm) => lm,
            };
            let mut model = AsrModel::new(&fam.arch, bench.vocab.clone(), lm, seed)?;
            pool.install(|| model.fit(&bench.source.train, &with_seed(&cfg.asr_train, seed)))?;
            save(format!("seed{seed}_{}", fam.name), model.to_checkpoint(), &mut checkpoints)?;
            let swapped = if fam.is_decoupled() {
                let mut m = model.clone();
                m.replace_internal_lm(lms.target_lm.clone())?;
                Some(m)
            } else {
                None
            };
            for test_set in [TestSet::Intra, TestSet::Cross] {
                let (test, fusion_lm) = match test_set {
                    TestSet::Intra => (&bench.source.test, &lms.source_lm),
                    TestSet::Cross => (&bench.target.test, &lms.target_lm),
                };
                let mut cell = Vec::new();
                for fusion in [false, true] {
                    for cond in fam.conditions() {
                        let mut dc = cfg.decode.clone();
                        dc.sf_weight = if fusion { cfg.fusion_weight } else { 0.0 };
                        let opts = DecodeOptions {
                            cfg: dc,
                            beta: (cond == Condition::AcousticOnly).then_some(0.0),
                            acoustic_only: cond == Condition::AcousticOnly,
                            fusion: fusion.then_some(fusion_lm),
                            mode: Some(cfg.transducer_mode),
                        };
                        let m = match cond {
                            Condition::TargetIlm => swapped.as_ref().expect("decoupled model"),
                            _ => &model,
                        };
                        let (counts, per) = pool.install(|| decode_rows(m, test, &opts))?;
                        info!(
                            "seed {seed} {} {} {}{}: WER {:.2}%",
                            fam.name,
                            test_set.name(),
                            cond.name(),
                            if fusion { "+sf" } else { "" },
                            100.0 * counts.errors() as f64 / counts.n as f64
                        );
                        cell.push(ReportRow {
                            seed,
                            family: fam.name.clone(),
                            test_set,
                            condition: cond,
                            fusion,
                            counts,
                            utt_errors: per,
                            z: None,
                            p_value: None,
                        });
                    }
                }
                let reference = cell
                    .iter()
                    .find(|r| r.condition == fam.reference() && !r.fusion)
                    .map(|r| r.utt_errors.clone())
                    .expect("reference condition decoded");
                for r in &mut cell {
                    if r.condition == fam.reference() && !r.fusion {
                        continue;
                    }
                    let t = matched_pairs_test(&r.utt_errors, &reference)?;
                    r.z = Some(t.z);
                    r.p_value = Some(t.p_value);
                }
                rows.extend(cell);
            }
        }
    }
    Ok(ExperimentReport { rows, checkpoints })
}
