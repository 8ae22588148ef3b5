use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, Normal};

use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::vocab::{Vocabulary, N_RESERVED, SOS};

/// How token sequences are rendered as feature frames.
#[derive(Clone, Debug, PartialEq)]
pub struct AcousticSpec {
    pub dim: usize,
    pub sigma: f64,
    pub min_dur: usize,
    pub max_dur: usize,
    /// Seed of the per-token anchor vectors; shared by every domain.
    pub anchor_seed: u64,
}

impl Default for AcousticSpec {
    fn default() -> Self {
        AcousticSpec {
            dim: 16,
            sigma: 0.3,
            min_dur: 2,
            max_dur: 5,
            anchor_seed: 7,
        }
    }
}

/// A synthetic text domain.
///
/// The next token is drawn from the first-order chain `markov` (rows indexed
/// by the previous content token, `initial` after sos). When it falls on a
/// confusable pair `(a, b)` the member is then chosen by the token two
/// positions back: `a` when that token's id is even, `b` when odd, swapped for
/// tokens in `flip_after`; the preferred member wins with probability
/// `pair_strength`. After tokens in `neutral_after` both members are equally
/// likely.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainSpec {
    pub name: String,
    pub n_content: usize,
    pub markov: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
    /// Per-token stop probability once `min_len` tokens exist.
    pub stop: f64,
    pub min_len: usize,
    pub max_len: usize,
    /// Token ids and the overlap of their acoustic anchors.
    pub confusable_pairs: Vec<(usize, usize, f64)>,
    pub pair_strength: f64,
    pub flip_after: Vec<usize>,
    pub neutral_after: Vec<usize>,
    pub acoustic: AcousticSpec,
}

fn check_row(row: &[f64], n: usize, what: &str) -> Result<()> {
    if row.len() != n {
        return Err(Error::Spec(format!("{what} has {} entries, expected {n}", row.len())));
    }
    if row.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
        return Err(Error::Spec(format!("{what} has a negative or non-finite entry")));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Spec(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

impl DomainSpec {
    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        let n = self.n_content;
        if n == 0 || vocab.n_content() != n {
            return Err(Error::Spec(format!("vocabulary has {} content tokens, spec {n}", vocab.n_content())));
        }
        if self.markov.len() != n {
            return Err(Error::Spec(format!("markov has {} rows, expected {n}", self.markov.len())));
        }
        for (i, row) in self.markov.iter().enumerate() {
            check_row(row, n, &format!("markov row {i}"))?;
        }
        check_row(&self.initial, n, "initial distribution")?;
        if !(self.stop > 0.0 && self.stop < 1.0) {
            return Err(Error::Spec(format!("stop probability {} outside (0,1)", self.stop)));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Spec("need 1 ≤ min_len ≤ max_len".into()));
        }
        if !(0.0..=1.0).contains(&self.pair_strength) {
            return Err(Error::Spec("pair_strength outside [0,1]".into()));
        }
        let mut seen = vec![false; vocab.len()];
        for &(a, b, o) in &self.confusable_pairs {
            for t in [a, b] {
                if t < N_RESERVED || t >= vocab.len() || seen[t] {
                    return Err(Error::Spec(format!("confusable token {t} invalid or repeated")));
                }
                seen[t] = true;
            }
            if !(0.0..=1.0).contains(&o) {
                return Err(Error::Spec(format!("overlap {o} outside [0,1]")));
            }
        }
        let a = &self.acoustic;
        if a.dim == 0 || a.min_dur == 0 || a.min_dur > a.max_dur || !(a.sigma >= 0.0) {
            return Err(Error::Spec("invalid acoustic settings".into()));
        }
        Ok(())
    }

    fn pair_of(&self, token: usize) -> Option<(usize, usize)> {
        self.confusable_pairs
            .iter()
            .find(|&&(a, b, _)| token == a || token == b)
            .map(|&(a, b, _)| (a, b))
    }

    /// The member of `(a, b)` preferred after `prev2`.
    pub fn preferred(&self, a: usize, b: usize, prev2: usize) -> usize {
        let even = prev2 % 2 == 0;
        let first = even != self.flip_after.contains(&prev2);
        if first {
            a
        } else {
            b
        }
    }

    /// Probability that the preferred member is drawn after `prev2`.
    pub fn strength_after(&self, prev2: usize) -> f64 {
        if self.neutral_after.contains(&prev2) {
            0.5
        } else {
            self.pair_strength
        }
    }

    fn row(&self, prev1: usize) -> &[f64] {
        if prev1 == SOS {
            &self.initial
        } else {
            &self.markov[prev1 - N_RESERVED]
        }
    }

    /// `p(next | prev2, prev1)` over content token ids `N_RESERVED..`.
    /// Use `SOS` for positions before the start.
    pub fn next_distribution(&self, prev2: usize, prev1: usize) -> Vec<f64> {
        let row = self.row(prev1);
        let mut out = vec![0.0; self.n_content];
        for (i, &p) in row.iter().enumerate() {
            let tok = i + N_RESERVED;
            match self.pair_of(tok) {
                Some((a, b)) => {
                    let pref = self.preferred(a, b, prev2);
                    let other = if pref == a { b } else { a };
                    let k = self.strength_after(prev2);
                    out[pref - N_RESERVED] += p * k;
                    out[other - N_RESERVED] += p * (1.0 - k);
                }
                None => out[i] += p,
            }
        }
        out
    }

    /// One token sequence.
    pub fn sample_tokens(&self, rng: &mut impl Rng) -> Result<Vec<usize>> {
        let (mut p2, mut p1) = (SOS, SOS);
        let mut out = Vec::new();
        loop {
            let row = self.row(p1);
            let dist = WeightedIndex::new(row).map_err(|e| Error::Spec(format!("row after {p1}: {e}")))?;
            let mut tok = dist.sample(rng) + N_RESERVED;
            if let Some((a, b)) = self.pair_of(tok) {
                let pref = self.preferred(a, b, p2);
                let other = if pref == a { b } else { a };
                tok = if rng.gen_bool(self.strength_after(p2)) { pref } else { other };
            }
            out.push(tok);
            p2 = p1;
            p1 = tok;
            if out.len() >= self.max_len || (out.len() >= self.min_len && rng.gen_bool(self.stop)) {
                return Ok(out);
            }
        }
    }

    /// Anchor vector per content token (index `id − N_RESERVED`), with
    /// confusable pairs interpolated: `a' = o·a + (1−o)·b`, `b' = o·b + (1−o)·a`.
    pub fn anchors(&self) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.acoustic.anchor_seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let base: Vec<Vec<f64>> = (0..self.n_content)
            .map(|_| (0..self.acoustic.dim).map(|_| normal.sample(&mut rng)).collect())
            .collect();
        let mut out = base.clone();
        for &(a, b, o) in &self.confusable_pairs {
            let (ia, ib) = (a - N_RESERVED, b - N_RESERVED);
            for j in 0..self.acoustic.dim {
                out[ia][j] = o * base[ia][j] + (1.0 - o) * base[ib][j];
                out[ib][j] = o * base[ib][j] + (1.0 - o) * base[ia][j];
            }
        }
        out
    }

    /// Frames for `tokens`: each token holds its anchor for 2–5 frames (by
    /// default) plus Gaussian noise.
    pub fn render(&self, tokens: &[usize], anchors: &[Vec<f64>], rng: &mut impl Rng) -> Tensor<f32> {
        let ac = &self.acoustic;
        let noise = Normal::new(0.0, ac.sigma.max(0.0)).expect("finite sigma");
        let mut data = Vec::new();
        for &t in tokens {
            let d = rng.gen_range(ac.min_dur..=ac.max_dur);
            let anchor = &anchors[t - N_RESERVED];
            for _ in 0..d {
                for &x in anchor {
                    let n = if ac.sigma > 0.0 { noise.sample(rng) } else { 0.0 };
                    data.push((x + n) as f32);
                }
            }
        }
        let rows = data.len() / ac.dim;
        Tensor::new(vec![rows, ac.dim], data).expect("consistent frame count")
    }
}

/// `n_utts` utterances with ids `{prefix}-{i:05}`, deterministic in `seed`.
pub fn gen_corpus(spec: &DomainSpec, vocab: &Vocabulary, n_utts: usize, seed: u64, prefix: &str) -> Result<Vec<Utterance>> {
    if n_utts == 0 {
        return Err(Error::Spec("n_utts must be ≥ 1".into()));
    }
    spec.validate(vocab)?;
    let anchors = spec.anchors();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_utts)
        .map(|i| {
            let tokens = spec.sample_tokens(&mut rng)?;
            let frames = spec.render(&tokens, &anchors, &mut rng);
            Ok(Utterance {
                id: format!("{prefix}-{i:05}"),
                tokens,
                frames,
                domain: spec.name.clone(),
            })
        })
        .collect()
}

/// Text-only sentences from the same grammar.
pub fn gen_text(spec: &DomainSpec, vocab: &Vocabulary, n: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    spec.validate(vocab)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| spec.sample_tokens(&mut rng)).collect()
}

/// Total-variation distance `½·Σ|p−q|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Mean row-wise total variation between two chains (initial row included).
pub fn mean_row_tv(a: &DomainSpec, b: &DomainSpec) -> f64 {
    let rows = a.markov.len() + 1;
    let mut s = total_variation(&a.initial, &b.initial);
    for (ra, rb) in a.markov.iter().zip(&b.markov) {
        s += total_variation(ra, rb);
    }
    s / rows as f64
}

/// Source/target domain pair used by the adaptation benchmark.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkSpec {
    pub n_content: usize,
    pub n_pairs: usize,
    /// Plain tokens after which the target domain flips pair preferences.
    pub n_flip: usize,
    /// Probability mass each chain row gives the flip tokens, per domain.
    pub flip_mass_source: f64,
    pub flip_mass_target: f64,
    /// Pair members are equally likely after flip tokens in the source domain.
    pub source_neutral: bool,
    /// Share of each target row taken from the source row.
    pub target_keep: f64,
    pub overlap: f64,
    pub pair_strength: f64,
    pub stop: f64,
    pub min_len: usize,
    pub max_len: usize,
    /// Dirichlet concentration of the random chain rows.
    pub concentration: f64,
    pub min_row_tv: f64,
    pub acoustic: AcousticSpec,
    pub grammar_seed: u64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            n_content: 20,
            n_pairs: 6,
            n_flip: 4,
            flip_mass_source: 0.03,
            flip_mass_target: 0.45,
            source_neutral: true,
            target_keep: 1.0,
            overlap: 0.52,
            pair_strength: 0.9,
            stop: 0.15,
            min_len: 3,
            max_len: 15,
            concentration: 0.5,
            min_row_tv: 0.3,
            acoustic: AcousticSpec::default(),
            grammar_seed: 11,
        }
    }
}

impl BenchmarkSpec {
    pub fn vocab(&self) -> Vocabulary {
        Vocabulary::synthetic(self.n_content)
    }

    /// Token ids of the flip tokens: the first `n_flip` plain tokens.
    pub fn flip_tokens(&self) -> Vec<usize> {
        (0..self.n_flip).map(|i| N_RESERVED + 2 * self.n_pairs + i).collect()
    }

    /// Builds the source and target domains, checking their separation.
    pub fn domains(&self) -> Result<(DomainSpec, DomainSpec)> {
        let n = self.n_content;
        if 2 * self.n_pairs + self.n_flip > n {
            return Err(Error::Spec("not enough content tokens for pairs and flip tokens".into()));
        }
        let pairs: Vec<(usize, usize, f64)> = (0..self.n_pairs)
            .map(|i| (N_RESERVED + 2 * i, N_RESERVED + 2 * i + 1, self.overlap))
            .collect();
        let flip = self.flip_tokens();
        let class = |tok: usize| {
            let i = tok - N_RESERVED;
            if i < 2 * self.n_pairs {
                i / 2
            } else {
                i
            }
        };
        let gamma = Gamma::new(self.concentration, 1.0).map_err(|e| Error::Spec(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.grammar_seed);
        let random_row = |prev: Option<usize>, rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    let tok = i + N_RESERVED;
                    let g: f64 = gamma.sample(rng);
                    if prev.is_some_and(|p| class(p) == class(tok)) {
                        0.0
                    } else {
                        g + 1e-3
                    }
                })
                .collect()
        };
        let with_flip_mass = |row: &[f64], mass: f64| -> Vec<f64> {
            let is_flip = |i: usize| flip.contains(&(i + N_RESERVED));
            let f: f64 = row.iter().enumerate().filter(|(i, _)| is_flip(*i)).map(|(_, p)| p).sum();
            let o: f64 = row.iter().enumerate().filter(|(i, _)| !is_flip(*i)).map(|(_, p)| p).sum();
            let mut out: Vec<f64> = row
                .iter()
                .enumerate()
                .map(|(i, &p)| if is_flip(i) { p / f * mass } else { p / o * (1.0 - mass) })
                .collect();
            let s: f64 = out.iter().sum();
            out.iter_mut().for_each(|p| *p /= s);
            out
        };
        let mut src_rows = Vec::new();
        let mut tgt_rows = Vec::new();
        for prev in std::iter::once(None).chain((0..n).map(|i| Some(i + N_RESERVED))) {
            let base = random_row(prev, &mut rng);
            let fresh = random_row(prev, &mut rng);
            let s = with_flip_mass(&base, self.flip_mass_source);
            let bs: f64 = base.iter().sum();
            let fs: f64 = fresh.iter().sum();
            let mixed: Vec<f64> = base
                .iter()
                .zip(&fresh)
                .map(|(b, f)| self.target_keep * b / bs + (1.0 - self.target_keep) * f / fs)
                .collect();
            let t = with_flip_mass(&mixed, self.flip_mass_target);
            src_rows.push(s);
            tgt_rows.push(t);
        }
        // Target stop odds against the non-flip tokens match the source's.
        let odds = self.stop / (1.0 - self.stop) * (1.0 - self.flip_mass_target) / (1.0 - self.flip_mass_source);
        let stop_target = odds / (1.0 + odds);
        let make = |name: &str, mut rows: Vec<Vec<f64>>, stop: f64, flip_after: Vec<usize>, neutral_after: Vec<usize>| {
            let initial = rows.remove(0);
            DomainSpec {
                name: name.to_string(),
                n_content: n,
                markov: rows,
                initial,
                stop,
                min_len: self.min_len,
                max_len: self.max_len,
                confusable_pairs: pairs.clone(),
                pair_strength: self.pair_strength,
                flip_after,
                neutral_after,
                acoustic: self.acoustic.clone(),
            }
        };
        let neutral = if self.source_neutral { flip.clone() } else { Vec::new() };
        let source = make("source", src_rows, self.stop, Vec::new(), neutral);
        let target = make("target", tgt_rows, stop_target, flip.clone(), Vec::new());
        let vocab = self.vocab();
        source.validate(&vocab)?;
        target.validate(&vocab)?;
        let tv = mean_row_tv(&source, &target);
        if tv < self.min_row_tv {
            return Err(Error::Spec(format!(
                "source/target rows differ by {tv:.3} in mean total variation, below {}",
                self.min_row_tv
            )));
        }
        Ok((source, target))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bench() -> (Vocabulary, DomainSpec, DomainSpec) {
        let b = BenchmarkSpec::default();
        let (s, t) = b.domains().unwrap();
        (b.vocab(), s, t)
    }

    #[test]
    fn default_domains_are_valid_and_separated() {
        let (v, s, t) = bench();
        s.validate(&v).unwrap();
        t.validate(&v).unwrap();
        assert!(mean_row_tv(&s, &t) >= 0.3);
        for p2 in [SOS, 4, 17, 18] {
            for p1 in [SOS, 5, 16, 23] {
                let d = t.next_distribution(p2, p1);
                assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let (v, s, _) = bench();
        let a = gen_corpus(&s, &v, 20, 3, "x").unwrap();
        let b = gen_corpus(&s, &v, 20, 3, "x").unwrap();
        assert_eq!(a, b);
        assert_ne!(a, gen_corpus(&s, &v, 20, 4, "x").unwrap());
    }

    #[test]
    fn frames_cover_twice_the_tokens() {
        let (v, _, t) = bench();
        for u in gen_corpus(&t, &v, 200, 1, "t").unwrap() {
            assert!(u.frames.rows() >= 2 * u.tokens.len());
            assert!((3..=15).contains(&u.tokens.len()));
            assert!(u.frames.data().iter().all(|x| x.is_finite()));
            assert!(u.tokens.windows(2).all(|w| w[0] != w[1]));
        }
    }

    #[test]
    fn clean_frames_are_recovered_by_nearest_anchor() {
        let (v, mut s, _) = bench();
        s.confusable_pairs.clear();
        s.acoustic.sigma = 0.0;
        let anchors = s.anchors();
        for u in gen_corpus(&s, &v, 50, 9, "c").unwrap() {
            let mut labels: Vec<usize> = Vec::new();
            for r in 0..u.frames.rows() {
                let row = u.frames.row(r);
                let best = (0..anchors.len())
                    .min_by(|&a, &b| {
                        let da: f64 = anchors[a].iter().zip(row).map(|(x, &y)| (x - y as f64).powi(2)).sum();
                        let db: f64 = anchors[b].iter().zip(row).map(|(x, &y)| (x - y as f64).powi(2)).sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                if labels.last() != Some(&(best + N_RESERVED)) {
                    labels.push(best + N_RESERVED);
                }
            }
            assert_eq!(labels, u.tokens);
        }
    }

    #[test]
    fn degenerate_rows_are_rejected() {
        let (v, mut s, _) = bench();
        s.markov[3] = vec![0.0; 20];
        assert!(matches!(s.validate(&v), Err(Error::Spec(_))));
        let (v, mut s, _) = bench();
        s.stop = 0.0;
        assert!(s.validate(&v).is_err());
    }

    #[test]
    fn flip_tokens_reverse_the_preference() {
        let (_, s, t) = bench();
        let f = BenchmarkSpec::default().flip_tokens()[0];
        assert_ne!(s.preferred(4, 5, f), t.preferred(4, 5, f));
        assert_eq!(s.preferred(4, 5, 21), t.preferred(4, 5, 21));
    }
}
