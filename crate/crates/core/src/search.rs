//! Decoding: joint CTC/attention beam search for AED models, greedy and
//! beam search for transducers, shallow fusion and internal-LM replacement.

use std::cell::RefCell;
use std::cmp::Ordering;
use std::collections::HashMap;

use rayon::prelude::*;

use crate::aed::{AedModel, AedSession};
use crate::ctc::{CtcPrefixScorer, CtcPrefixState};
use crate::error::{Error, Result};
use crate::lm::LanguageModel;
use crate::tensor::{log_add, Real, Tensor};
use crate::transducer::{TransducerModel, TransducerSession};
use crate::vocab::{BLANK, EOS, SOS};

/// Next-token log-probabilities given a history without sos.
pub trait TokenScorer {
    fn log_probs(&self, hist: &[usize]) -> Result<Vec<f64>>;
}

/// Transducer log-probabilities at frame `t` after emitting `hist`.
pub trait FrameScorer {
    fn frames(&self) -> usize;
    fn log_probs(&self, t: usize, hist: &[usize]) -> Result<Vec<f64>>;
}

impl<F: Real> TokenScorer for AedSession<'_, F> {
    fn log_probs(&self, hist: &[usize]) -> Result<Vec<f64>> {
        AedSession::log_probs(self, hist)
    }
}

impl<F: Real> FrameScorer for TransducerSession<'_, F> {
    fn frames(&self) -> usize {
        TransducerSession::frames(self)
    }

    fn log_probs(&self, t: usize, hist: &[usize]) -> Result<Vec<f64>> {
        TransducerSession::log_probs(self, t, hist)
    }
}

/// Memoising LM scorer for fusion.
pub struct LmScorer<'a, F: Real> {
    lm: &'a LanguageModel<F>,
    cache: RefCell<HashMap<Vec<usize>, Vec<f64>>>,
}

impl<'a, F: Real> LmScorer<'a, F> {
    pub fn new(lm: &'a LanguageModel<F>) -> Self {
        LmScorer {
            lm,
            cache: RefCell::new(HashMap::new()),
        }
    }
}

impl<F: Real> TokenScorer for LmScorer<'_, F> {
    fn log_probs(&self, hist: &[usize]) -> Result<Vec<f64>> {
        if let Some(lp) = self.cache.borrow().get(hist) {
            return Ok(lp.clone());
        }
        let lp: Vec<f64> = self.lm.next_log_probs(hist)?.iter().map(|x| x.to_f64c()).collect();
        self.cache.borrow_mut().insert(hist.to_vec(), lp.clone());
        Ok(lp)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    /// Cumulative decoder (or transducer) log-probability.
    pub s_att: f64,
    /// CTC prefix score.
    pub s_ctc: f64,
    /// Cumulative fusion-LM log-probability.
    pub s_lm: f64,
    pub s_total: f64,
    pub finished: bool,
}

#[derive(Clone, Debug)]
pub struct DecodeConfig {
    pub beam: usize,
    /// CTC weight μ in joint decoding.
    pub mu: f64,
    /// Shallow-fusion LM weight.
    pub sf_weight: f64,
    /// Maximum output length as a multiple of the frame count.
    pub max_len_ratio: f64,
    /// Overrides `max_len_ratio` when set.
    pub max_len: Option<usize>,
    /// Candidates per hypothesis before pruning; defaults to `⌈1.5·beam⌉`.
    pub pre_beam: Option<usize>,
    /// Transducer emissions allowed per frame.
    pub emission_cap: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam: 10,
            mu: 0.3,
            sf_weight: 0.0,
            max_len_ratio: 1.0,
            max_len: None,
            pre_beam: None,
            emission_cap: 10,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam == 0 {
            return Err(Error::Config("beam must be ≥ 1".into()));
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(Error::Config(format!("mu = {} outside [0,1]", self.mu)));
        }
        if !(self.sf_weight >= 0.0 && self.sf_weight.is_finite()) {
            return Err(Error::Config(format!("sf_weight = {} must be finite and ≥ 0", self.sf_weight)));
        }
        if self.emission_cap == 0 {
            return Err(Error::Config("emission_cap must be ≥ 1".into()));
        }
        Ok(())
    }

    fn max_len(&self, frames: usize) -> usize {
        self.max_len
            .unwrap_or_else(|| (self.max_len_ratio * frames as f64).ceil() as usize)
            .max(1)
    }
}

/// `μ·S_ctc + (1−μ)·S_att + w·S_lm`; zero-weight terms are left out.
pub fn joint_score(s_ctc: f64, s_att: f64, s_lm: f64, mu: f64, w: f64) -> f64 {
    let mut s = if mu == 0.0 {
        s_att
    } else if mu == 1.0 {
        s_ctc
    } else {
        mu * s_ctc + (1.0 - mu) * s_att
    };
    if w != 0.0 {
        s += w * s_lm;
    }
    s
}

/// Adds one fusion-LM step to a hypothesis's LM score. With `w = 0` the
/// LM is not consulted and the score is returned unchanged.
pub fn shallow_fusion_score(s_lm: f64, lm: Option<&dyn TokenScorer>, hist: &[usize], token: usize, w: f64) -> Result<f64> {
    match lm {
        Some(lm) if w != 0.0 => Ok(s_lm + lm.log_probs(hist)?[token]),
        _ => Ok(s_lm),
    }
}

/// Best first, then lexicographically smaller tokens.
fn rank(a_score: f64, a_tokens: &[usize], b_score: f64, b_tokens: &[usize]) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_tokens.cmp(b_tokens))
}

fn sort_hyps(h: &mut [Hypothesis]) {
    h.sort_by(|a, b| rank(a.s_total, &a.tokens, b.s_total, &b.tokens));
}

struct Live {
    hyp: Hypothesis,
    ctc: Option<CtcPrefixState>,
}

/// Length-synchronous joint CTC/attention beam search.
///
/// Each step expands every live hypothesis by its top `pre_beam` tokens,
/// rescores with `μ·S_ctc + (1−μ)·S_att + w·S_lm` and keeps the best `beam`.
/// Hypotheses end on eos, which is the only choice once `max_len` tokens are
/// reached. Returns the finished hypotheses, best first.
pub fn joint_beam_search(
    dec: &dyn TokenScorer,
    ctc: Option<&CtcPrefixScorer>,
    fusion: Option<&dyn TokenScorer>,
    frames: usize,
    cfg: &DecodeConfig,
) -> Result<Vec<Hypothesis>> {
    cfg.validate()?;
    if frames == 0 {
        return Err(Error::Contract("empty encoder output".into()));
    }
    let mu = cfg.mu;
    let w = if fusion.is_some() { cfg.sf_weight } else { 0.0 };
    let ctc = if mu > 0.0 {
        Some(ctc.ok_or_else(|| Error::Contract("CTC weight > 0 needs a CTC posterior".into()))?)
    } else {
        None
    };
    let max_len = cfg.max_len(frames);
    let pre_beam = cfg.pre_beam.unwrap_or((cfg.beam * 3).div_ceil(2));
    let root = Hypothesis {
        tokens: Vec::new(),
        s_att: 0.0,
        s_ctc: 0.0,
        s_lm: 0.0,
        s_total: 0.0,
        finished: false,
    };
    let mut live = vec![Live {
        hyp: root,
        ctc: ctc.map(|c| c.initial()),
    }];
    let mut ended: Vec<Hypothesis> = Vec::new();
    for step in 0..=max_len {
        let mut cands: Vec<(Hypothesis, usize, Option<usize>)> = Vec::new();
        for (pi, l) in live.iter().enumerate() {
            let h = &l.hyp;
            let att = dec.log_probs(&h.tokens)?;
            let lm = match fusion {
                Some(f) if w != 0.0 => Some(f.log_probs(&h.tokens)?),
                _ => None,
            };
            let mut tokens: Vec<usize> = if step == max_len {
                vec![EOS]
            } else {
                (0..att.len()).filter(|&k| k != BLANK && k != SOS).collect()
            };
            if tokens.len() > pre_beam {
                let pre = |k: usize| {
                    let a = if mu == 1.0 { 0.0 } else { (1.0 - mu) * att[k] };
                    a + lm.as_ref().map_or(0.0, |l| w * l[k])
                };
                tokens.sort_by(|&a, &b| pre(b).total_cmp(&pre(a)).then(a.cmp(&b)));
                tokens.truncate(pre_beam);
            }
            for k in tokens {
                let s_att = h.s_att + att[k];
                let s_ctc = match (ctc, &l.ctc) {
                    (Some(c), Some(st)) if k == EOS => c.eos_score(st),
                    (Some(c), Some(st)) => c.extend(st, k).score,
                    _ => 0.0,
                };
                let s_lm = match &lm {
                    Some(l) => h.s_lm + l[k],
                    None => h.s_lm,
                };
                let s_total = joint_score(s_ctc, s_att, s_lm, mu, w);
                if !s_total.is_finite() {
                    continue;
                }
                let mut tokens = h.tokens.clone();
                tokens.push(k);
                let finished = k == EOS;
                cands.push((
                    Hypothesis {
                        tokens,
                        s_att,
                        s_ctc,
                        s_lm,
                        s_total,
                        finished,
                    },
                    pi,
                    (!finished).then_some(k),
                ));
            }
        }
        cands.sort_by(|a, b| rank(a.0.s_total, &a.0.tokens, b.0.s_total, &b.0.tokens));
        cands.truncate(cfg.beam);
        let mut next = Vec::new();
        for (h, pi, k) in cands {
            if h.finished {
                ended.push(h);
            } else {
                let st = match (ctc, &live[pi].ctc, k) {
                    (Some(c), Some(st), Some(k)) => Some(c.extend(st, k)),
                    _ => None,
                };
                next.push(Live { hyp: h, ctc: st });
            }
        }
        live = next;
        sort_hyps(&mut ended);
        // Scores only decrease along a hypothesis, so nothing live can
        // overtake the best finished one.
        let best_end = ended.first().map(|h| h.s_total);
        if live.is_empty() || best_end.is_some_and(|b| live.iter().all(|l| l.hyp.s_total < b)) {
            break;
        }
    }
    if ended.is_empty() {
        return Err(Error::Numeric("no hypothesis with a finite score".into()));
    }
    for h in &mut ended {
        h.tokens.pop();
    }
    Ok(ended)
}

fn is_label(k: usize) -> bool {
    k != BLANK && k != SOS && k != EOS
}

/// Greedy transducer decoding: at each frame emit the best label while it
/// beats blank, at most `emission_cap` times, then move to the next frame.
pub fn transducer_greedy(
    s: &dyn FrameScorer,
    fusion: Option<&dyn TokenScorer>,
    cfg: &DecodeConfig,
) -> Result<Hypothesis> {
    cfg.validate()?;
    let w = if fusion.is_some() { cfg.sf_weight } else { 0.0 };
    let mut h = Hypothesis {
        tokens: Vec::new(),
        s_att: 0.0,
        s_ctc: 0.0,
        s_lm: 0.0,
        s_total: 0.0,
        finished: false,
    };
    for t in 0..s.frames() {
        let mut emitted = 0;
        loop {
            let lp = s.log_probs(t, &h.tokens)?;
            let lm = match fusion {
                Some(f) if w != 0.0 && emitted < cfg.emission_cap => Some(f.log_probs(&h.tokens)?),
                _ => None,
            };
            let score = |k: usize| lp[k] + lm.as_ref().map_or(0.0, |l| w * l[k]);
            let best = (0..lp.len())
                .filter(|&k| is_label(k))
                .fold(None::<usize>, |b, k| match b {
                    Some(b) if score(b) >= score(k) => Some(b),
                    _ => Some(k),
                });
            match best {
                Some(k) if emitted < cfg.emission_cap && score(k) > lp[BLANK] => {
                    h.s_att += lp[k];
                    if let Some(l) = &lm {
                        h.s_lm += l[k];
                    }
                    h.tokens.push(k);
                    emitted += 1;
                }
                _ => {
                    h.s_att += lp[BLANK];
                    break;
                }
            }
        }
    }
    h.s_total = joint_score(0.0, h.s_att, h.s_lm, 0.0, w);
    h.finished = true;
    Ok(h)
}

#[derive(Clone)]
struct Partial {
    tokens: Vec<usize>,
    s_att: f64,
    s_lm: f64,
}

/// Frame-synchronous transducer beam search.
///
/// Within a frame, hypotheses are expanded up to `emission_cap` times; each
/// round pools "blank" (move on to the next frame) and label extensions and
/// keeps the best `beam` of the pool. Hypotheses reaching the next frame with
/// the same tokens are merged by summing their probabilities. With `beam = 1`
/// this is exactly [`transducer_greedy`].
pub fn transducer_beam_search(
    s: &dyn FrameScorer,
    fusion: Option<&dyn TokenScorer>,
    cfg: &DecodeConfig,
) -> Result<Vec<Hypothesis>> {
    cfg.validate()?;
    let w = if fusion.is_some() { cfg.sf_weight } else { 0.0 };
    let total = |p: &Partial| joint_score(0.0, p.s_att, p.s_lm, 0.0, w);
    let mut beam = vec![Partial {
        tokens: Vec::new(),
        s_att: 0.0,
        s_lm: 0.0,
    }];
    for t in 0..s.frames() {
        let mut active = beam;
        let mut next: Vec<Partial> = Vec::new();
        let mut next_index: HashMap<Vec<usize>, usize> = HashMap::new();
        for e in 0..=cfg.emission_cap {
            // (candidate, advances to the next frame)
            let mut pool: Vec<(Partial, bool)> = Vec::new();
            for h in &active {
                let lp = s.log_probs(t, &h.tokens)?;
                pool.push((
                    Partial {
                        tokens: h.tokens.clone(),
                        s_att: h.s_att + lp[BLANK],
                        s_lm: h.s_lm,
                    },
                    true,
                ));
                if e == cfg.emission_cap {
                    continue;
                }
                let lm = match fusion {
                    Some(f) if w != 0.0 => Some(f.log_probs(&h.tokens)?),
                    _ => None,
                };
                for k in (0..lp.len()).filter(|&k| is_label(k)) {
                    let mut tokens = h.tokens.clone();
                    tokens.push(k);
                    pool.push((
                        Partial {
                            tokens,
                            s_att: h.s_att + lp[k],
                            s_lm: h.s_lm + lm.as_ref().map_or(0.0, |l| l[k]),
                        },
                        false,
                    ));
                }
            }
            pool.retain(|(p, _)| total(p).is_finite());
            pool.sort_by(|a, b| rank(total(&a.0), &a.0.tokens, total(&b.0), &b.0.tokens).then(b.1.cmp(&a.1)));
            pool.truncate(cfg.beam);
            let mut emits = Vec::new();
            for (p, advance) in pool {
                if !advance {
                    emits.push(p);
                    continue;
                }
                match next_index.get(&p.tokens) {
                    Some(&i) => next[i].s_att = log_add(next[i].s_att, p.s_att),
                    None => {
                        next_index.insert(p.tokens.clone(), next.len());
                        next.push(p);
                    }
                }
            }
            // A label extension can only lose probability from here on, so
            // it is dropped once it cannot enter the next frame's beam.
            if next.len() >= cfg.beam {
                let mut scores: Vec<f64> = next.iter().map(total).collect();
                scores.sort_by(|a, b| b.total_cmp(a));
                let floor = scores[cfg.beam - 1];
                emits.retain(|p| total(p) >= floor);
            }
            if emits.is_empty() {
                break;
            }
            active = emits;
        }
        next.sort_by(|a, b| rank(total(a), &a.tokens, total(b), &b.tokens));
        next.truncate(cfg.beam);
        if next.is_empty() {
            return Err(Error::Numeric("no transducer hypothesis with a finite score".into()));
        }
        beam = next;
    }
    Ok(beam
        .into_iter()
        .map(|p| Hypothesis {
            s_total: total(&p),
            tokens: p.tokens,
            s_att: p.s_att,
            s_ctc: 0.0,
            s_lm: p.s_lm,
            finished: true,
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransducerMode {
    Greedy,
    Beam,
}

/// Models whose internal LM can be swapped at decode time.
pub trait InternalLmHost<F: Real> {
    fn replace_internal_lm(&mut self, lm: LanguageModel<F>) -> Result<LanguageModel<F>>;
}

impl<F: Real> InternalLmHost<F> for AedModel<F> {
    fn replace_internal_lm(&mut self, lm: LanguageModel<F>) -> Result<LanguageModel<F>> {
        AedModel::replace_internal_lm(self, lm)
    }
}

impl<F: Real> InternalLmHost<F> for TransducerModel<F> {
    fn replace_internal_lm(&mut self, lm: LanguageModel<F>) -> Result<LanguageModel<F>> {
        TransducerModel::replace_internal_lm(self, lm)
    }
}

/// Installs `lm` as the internal LM of `model`, returning the previous one
/// so the swap can be undone.
pub fn replace_internal_lm<F: Real, M: InternalLmHost<F>>(model: &mut M, lm: LanguageModel<F>) -> Result<LanguageModel<F>> {
    model.replace_internal_lm(lm)
}

/// Options shared by the model-level decode entry points.
#[derive(Clone, Debug, Default)]
pub struct DecodeOptions<'a, F: Real> {
    pub cfg: DecodeConfig,
    /// LM weight override for AED decoding (0 = acoustic only).
    pub beta: Option<f64>,
    /// Transducer: decode from `logits^AC` without the internal LM.
    pub acoustic_only: bool,
    pub fusion: Option<&'a LanguageModel<F>>,
    pub mode: Option<TransducerMode>,
}

/// Best joint CTC/attention hypothesis for one utterance.
pub fn decode_aed<F: Real>(model: &AedModel<F>, frames: &Tensor<F>, opts: &DecodeOptions<'_, F>) -> Result<Hypothesis> {
    let s = model.session(frames, opts.beta)?;
    let ctc = if opts.cfg.mu > 0.0 {
        Some(CtcPrefixScorer::new(s.ctc_log_probs(), BLANK)?)
    } else {
        None
    };
    let lm = opts.fusion.map(LmScorer::new);
    let fusion = lm.as_ref().map(|l| l as &dyn TokenScorer);
    let hyps = joint_beam_search(&s, ctc.as_ref(), fusion, frames.rows(), &opts.cfg)?;
    Ok(hyps.into_iter().next().expect("at least one hypothesis"))
}

/// Best transducer hypothesis for one utterance.
pub fn decode_transducer<F: Real>(
    model: &TransducerModel<F>,
    frames: &Tensor<F>,
    opts: &DecodeOptions<'_, F>,
) -> Result<Hypothesis> {
    let s = model.session(frames, opts.acoustic_only)?;
    let lm = opts.fusion.map(LmScorer::new);
    let fusion = lm.as_ref().map(|l| l as &dyn TokenScorer);
    match opts.mode.unwrap_or(TransducerMode::Beam) {
        TransducerMode::Greedy => transducer_greedy(&s, fusion, &opts.cfg),
        TransducerMode::Beam => Ok(transducer_beam_search(&s, fusion, &opts.cfg)?
            .into_iter()
            .next()
            .expect("non-empty beam")),
    }
}

/// Either model family behind one decode call.
#[derive(Clone, Copy)]
pub enum AsrRef<'m, F: Real> {
    Aed(&'m AedModel<F>),
    Transducer(&'m TransducerModel<F>),
}

impl<F: Real> AsrRef<'_, F> {
    pub fn decode(&self, frames: &Tensor<F>, opts: &DecodeOptions<'_, F>) -> Result<Hypothesis> {
        match self {
            AsrRef::Aed(m) => decode_aed(m, frames, opts),
            AsrRef::Transducer(m) => decode_transducer(m, frames, opts),
        }
    }
}

/// Decodes utterances in parallel; results keep the input order.
pub fn decode_all<F: Real>(
    model: AsrRef<'_, F>,
    inputs: &[&Tensor<F>],
    opts: &DecodeOptions<'_, F>,
) -> Result<Vec<Hypothesis>> {
    inputs.par_iter().map(|x| model.decode(x, opts)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctc::ctc_sequence_logprob;
    use crate::tensor::log_softmax_rows;
    use crate::train::mix_seed;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Deterministic random next-token distribution per history.
    struct ToyDecoder {
        v: usize,
        seed: u64,
        banned: Vec<usize>,
    }

    impl TokenScorer for ToyDecoder {
        fn log_probs(&self, hist: &[usize]) -> Result<Vec<f64>> {
            let key = hist.iter().fold(self.seed, |a, &k| mix_seed(a, k as u64 + 1));
            let mut rng = ChaCha8Rng::seed_from_u64(key);
            let logits: Vec<f64> = (0..self.v)
                .map(|k| if self.banned.contains(&k) { -1e30 } else { rng.gen_range(-3.0..3.0) })
                .collect();
            Ok(log_softmax_rows(&Tensor::new(vec![1, self.v], logits)?)?.data().to_vec())
        }
    }

    struct ToyLattice {
        t: usize,
        v: usize,
        seed: u64,
        peaked: Option<Vec<usize>>,
    }

    impl FrameScorer for ToyLattice {
        fn frames(&self) -> usize {
            self.t
        }

        fn log_probs(&self, t: usize, hist: &[usize]) -> Result<Vec<f64>> {
            let key = hist.iter().fold(mix_seed(self.seed, t as u64), |a, &k| mix_seed(a, k as u64 + 1));
            let mut rng = ChaCha8Rng::seed_from_u64(key);
            let mut logits: Vec<f64> = (0..self.v)
                .map(|k| if k == SOS || k == EOS || k == 1 { -1e30 } else { rng.gen_range(-2.0..2.0) })
                .collect();
            if let Some(path) = &self.peaked {
                // One label per frame along `path`, then blank.
                let want = if hist.len() == t && t < path.len() { path[t] } else { BLANK };
                logits[want] += 8.0;
            }
            Ok(log_softmax_rows(&Tensor::new(vec![1, self.v], logits)?)?.data().to_vec())
        }
    }

    fn toy_decoder(seed: u64) -> ToyDecoder {
        ToyDecoder {
            v: 7,
            seed,
            banned: vec![BLANK, 1, SOS],
        }
    }

    fn ctc_posterior(seed: u64, t: usize, v: usize) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        log_softmax_rows(&Tensor::from_fn(&[t, v], |_| rng.gen_range(-2.0..2.0))).unwrap()
    }

    #[test]
    fn score_arithmetic() {
        assert!((joint_score(-2.0, -1.0, 0.0, 0.3, 0.0) + 1.3).abs() < 1e-12);
        assert_eq!(joint_score(-5.0, -1.25, -7.0, 0.0, 0.0), -1.25);
        assert_eq!(joint_score(-5.0, -1.0, -2.0, 0.0, 0.5), -2.0);
    }

    #[test]
    fn exhaustive_oracle_on_toy_model() {
        for seed in 0..20 {
            let dec = toy_decoder(seed);
            let lp = ctc_posterior(seed + 100, 4, 7);
            let ctc = CtcPrefixScorer::new(&lp, BLANK).unwrap();
            let cfg = DecodeConfig {
                beam: 100,
                mu: 0.3,
                max_len: Some(2),
                ..DecodeConfig::default()
            };
            let got = joint_beam_search(&dec, Some(&ctc), None, 4, &cfg).unwrap();

            let mut seqs: Vec<Vec<usize>> = vec![vec![]];
            for a in 4..7 {
                seqs.push(vec![a]);
                for b in 4..7 {
                    seqs.push(vec![a, b]);
                }
            }
            let score = |y: &[usize]| {
                let mut att = 0.0;
                for i in 0..=y.len() {
                    let k = if i == y.len() { EOS } else { y[i] };
                    att += dec.log_probs(&y[..i]).unwrap()[k];
                }
                0.3 * ctc_sequence_logprob(&lp, y, BLANK) + 0.7 * att
            };
            let best = seqs
                .iter()
                .max_by(|a, b| score(a).total_cmp(&score(b)).then(b.cmp(a)))
                .unwrap();
            assert_eq!(&got[0].tokens, best, "seed {seed}");
            assert!((got[0].s_total - score(best)).abs() < 1e-9);
            assert!(got.iter().all(|h| h.s_att.is_finite() && h.s_ctc.is_finite()));
        }
    }

    #[test]
    fn beam_one_without_ctc_is_greedy_rollout() {
        for seed in 0..10 {
            let dec = toy_decoder(seed);
            let cfg = DecodeConfig {
                beam: 1,
                mu: 0.0,
                max_len: Some(6),
                ..DecodeConfig::default()
            };
            let got = joint_beam_search(&dec, None, None, 8, &cfg).unwrap();
            let mut hist = Vec::new();
            loop {
                let lp = dec.log_probs(&hist).unwrap();
                let cands: Vec<usize> = if hist.len() == 6 { vec![EOS] } else { (3..7).collect() };
                let k = cands.iter().copied().fold(cands[0], |b, k| if lp[k] > lp[b] { k } else { b });
                if k == EOS {
                    break;
                }
                hist.push(k);
            }
            assert_eq!(got[0].tokens, hist);
        }
    }

    #[test]
    fn zero_fusion_weight_is_bitwise_noop() {
        let dec = toy_decoder(3);
        let lm = toy_decoder(4);
        let lp = ctc_posterior(5, 6, 7);
        let ctc = CtcPrefixScorer::new(&lp, BLANK).unwrap();
        let cfg = DecodeConfig {
            beam: 4,
            sf_weight: 0.0,
            max_len: Some(4),
            ..DecodeConfig::default()
        };
        let a = joint_beam_search(&dec, Some(&ctc), None, 6, &cfg).unwrap();
        let b = joint_beam_search(&dec, Some(&ctc), Some(&lm), 6, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(shallow_fusion_score(-1.5, Some(&lm), &[], 4, 0.0).unwrap(), -1.5);
    }

    struct Uniform(usize);

    impl TokenScorer for Uniform {
        fn log_probs(&self, _: &[usize]) -> Result<Vec<f64>> {
            Ok(vec![-(self.0 as f64).ln(); self.0])
        }
    }

    #[test]
    fn uniform_fusion_lm_keeps_fixed_length_ranking() {
        let dec = toy_decoder(8);
        let cfg = DecodeConfig {
            beam: 50,
            mu: 0.0,
            max_len: Some(2),
            ..DecodeConfig::default()
        };
        let plain = joint_beam_search(&dec, None, None, 4, &cfg).unwrap();
        let fused = joint_beam_search(&dec, None, Some(&Uniform(7)), 4, &DecodeConfig { sf_weight: 0.2, ..cfg }).unwrap();
        for len in 0..=2 {
            let a: Vec<_> = plain.iter().filter(|h| h.tokens.len() == len).map(|h| h.tokens.clone()).collect();
            let b: Vec<_> = fused.iter().filter(|h| h.tokens.len() == len).map(|h| h.tokens.clone()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn empty_input_is_an_error() {
        let dec = toy_decoder(0);
        assert!(joint_beam_search(&dec, None, None, 0, &DecodeConfig { mu: 0.0, ..DecodeConfig::default() }).is_err());
    }

    #[test]
    fn blank_everywhere_gives_empty_output() {
        struct AllBlank;
        impl FrameScorer for AllBlank {
            fn frames(&self) -> usize {
                5
            }
            fn log_probs(&self, _: usize, _: &[usize]) -> Result<Vec<f64>> {
                let mut v = vec![-30.0; 6];
                v[BLANK] = 0.0;
                Ok(v)
            }
        }
        let cfg = DecodeConfig::default();
        assert!(transducer_greedy(&AllBlank, None, &cfg).unwrap().tokens.is_empty());
        assert!(transducer_beam_search(&AllBlank, None, &cfg).unwrap()[0].tokens.is_empty());
    }

    /// All label sequences reachable with at most `cap` emissions per frame,
    /// with their total probability.
    fn enumerate(s: &ToyLattice, cap: usize) -> HashMap<Vec<usize>, f64> {
        let mut out: HashMap<Vec<usize>, f64> = HashMap::new();
        fn go(s: &ToyLattice, cap: usize, t: usize, e: usize, hist: Vec<usize>, acc: f64, out: &mut HashMap<Vec<usize>, f64>) {
            if t == s.t {
                let v = out.entry(hist).or_insert(f64::NEG_INFINITY);
                *v = log_add(*v, acc);
                return;
            }
            let lp = s.log_probs(t, &hist).unwrap();
            go(s, cap, t + 1, 0, hist.clone(), acc + lp[BLANK], out);
            if e < cap {
                for k in (0..s.v).filter(|&k| is_label(k)) {
                    let mut h = hist.clone();
                    h.push(k);
                    go(s, cap, t, e + 1, h, acc + lp[k], out);
                }
            }
        }
        go(s, cap, 0, 0, Vec::new(), 0.0, &mut out);
        out
    }

    #[test]
    fn transducer_beam_matches_exhaustive_search() {
        for seed in 0..10 {
            let s = ToyLattice {
                t: 3,
                v: 6,
                seed,
                peaked: None,
            };
            let cfg = DecodeConfig {
                beam: 10_000,
                emission_cap: 2,
                ..DecodeConfig::default()
            };
            let all = enumerate(&s, 2);
            let (best, p) = all
                .iter()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(a.0)))
                .unwrap();
            let got = transducer_beam_search(&s, None, &cfg).unwrap();
            assert_eq!(&got[0].tokens, best, "seed {seed}");
            assert!((got[0].s_total - p).abs() < 1e-9);
        }
    }

    #[test]
    fn peaked_lattice_recovers_its_path() {
        let path = vec![4, 5, 4, 5];
        let s = ToyLattice {
            t: 4,
            v: 6,
            seed: 1,
            peaked: Some(path.clone()),
        };
        let cfg = DecodeConfig::default();
        assert_eq!(transducer_beam_search(&s, None, &cfg).unwrap()[0].tokens, path);
        assert_eq!(transducer_greedy(&s, None, &cfg).unwrap().tokens, path);
    }

    #[test]
    fn transducer_beam_one_is_greedy() {
        for seed in 0..20 {
            let s = ToyLattice {
                t: 6,
                v: 6,
                seed,
                peaked: None,
            };
            let lm = toy_decoder(seed + 50);
            for (fusion, w) in [(None, 0.0), (Some(&lm as &dyn TokenScorer), 0.3)] {
                let cfg = DecodeConfig {
                    beam: 1,
                    sf_weight: w,
                    emission_cap: 3,
                    ..DecodeConfig::default()
                };
                let g = transducer_greedy(&s, fusion, &cfg).unwrap();
                let b = transducer_beam_search(&s, fusion, &cfg).unwrap();
                assert_eq!(b.len(), 1);
                assert_eq!(g, b[0]);
            }
        }
    }
}
