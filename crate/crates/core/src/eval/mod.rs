//! Synthetic two-domain benchmark, scoring and significance testing.

mod experiment;
mod grammar;
mod stats;
mod wer;

pub use experiment::{run_adaptation_experiment, Condition, ExperimentConfig, ExperimentReport, Family, ReportRow, TestSet};
pub use grammar::{gen_corpus, gen_text, mean_row_tv, total_variation, AcousticSpec, BenchmarkSpec, DomainSpec};
pub use stats::{matched_pairs_test, MatchedPairs};
pub use wer::{corpus_wer, edit_counts, EditCounts};

use crate::data::Utterance;
use crate::error::Result;
use crate::train::mix_seed;
use crate::vocab::Vocabulary;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub text: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes {
            train: 2000,
            dev: 200,
            test: 200,
            text: 10_000,
        }
    }
}

/// One domain's splits.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainData {
    pub spec: DomainSpec,
    pub train: Vec<Utterance>,
    pub dev: Vec<Utterance>,
    pub test: Vec<Utterance>,
    pub text: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Benchmark {
    pub vocab: Vocabulary,
    pub source: DomainData,
    pub target: DomainData,
}

fn domain_data(spec: DomainSpec, vocab: &Vocabulary, sizes: SplitSizes, seed: u64, k: u64) -> Result<DomainData> {
    let name = spec.name.clone();
    let split = |i: u64, n: usize, tag: &str| gen_corpus(&spec, vocab, n, mix_seed(seed, k * 8 + i), &format!("{name}-{tag}"));
    let train = if sizes.train > 0 { split(0, sizes.train, "train")? } else { Vec::new() };
    let dev = if sizes.dev > 0 { split(1, sizes.dev, "dev")? } else { Vec::new() };
    let test = if sizes.test > 0 { split(2, sizes.test, "test")? } else { Vec::new() };
    let text = gen_text(&spec, vocab, sizes.text, mix_seed(seed, k * 8 + 3))?;
    Ok(DomainData {
        spec,
        train,
        dev,
        test,
        text,
    })
}

impl Benchmark {
    /// Generates both domains; the same `seed` gives identical data.
    pub fn generate(spec: &BenchmarkSpec, sizes: SplitSizes, seed: u64) -> Result<Benchmark> {
        let vocab = spec.vocab();
        let (s, t) = spec.domains()?;
        Ok(Benchmark {
            source: domain_data(s, &vocab, sizes, seed, 0)?,
            target: domain_data(t, &vocab, sizes, seed, 1)?,
            vocab,
        })
    }

    pub fn domain(&self, name: &str) -> Option<&DomainData> {
        [&self.source, &self.target].into_iter().find(|d| d.spec.name == name)
    }
}
