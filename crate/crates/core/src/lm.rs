//! Causal transformer language model: the swappable internal LM and the
//! shallow-fusion LM.

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{embed_with_positions, AttentionConfig, Ctx, DecoderLayer, LayerKind, LayerNorm, Linear, Mask};
use crate::tensor::{cross_entropy, log_softmax_rows, ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::train::{mix_seed, train, EpochStats, TrainConfig};
use crate::vocab::{Vocabulary, EOS, SOS};

#[derive(Clone, Debug)]
pub struct LanguageModel<F: Real = f32> {
    pub cfg: AttentionConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore<F>,
    pub embedding: ParamId,
    pub layers: Vec<DecoderLayer>,
    pub final_ln: LayerNorm,
    pub head: Linear,
    pub domain_tag: String,
    /// Shared by a model and everything fine-tuned from it.
    pub lineage: u64,
}

impl<F: Real> LanguageModel<F> {
    /// Random initialisation; the output head starts at zero, so an untrained
    /// model predicts the uniform distribution.
    pub fn new(vocab: Vocabulary, cfg: AttentionConfig, seed: u64, domain_tag: &str) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = cfg.d_model;
        let embedding = store.add_normal("lm.emb", &[vocab.len(), d], 1.0 / (d as f64).sqrt(), &mut rng);
        let layers = (0..cfg.n_layers)
            .map(|l| DecoderLayer::new(&mut store, &format!("lm.l{l}"), LayerKind::SelfOnly, &cfg, true, &mut rng))
            .collect();
        let final_ln = LayerNorm::new(&mut store, "lm.ln_out", d);
        let head = Linear::new(&mut store, "lm.head", d, vocab.len(), &mut rng);
        let zero = Tensor::zeros(&[d, vocab.len()]);
        store.set_value(head.w, zero)?;
        let lineage = mix_seed(vocab.hash(), seed);
        Ok(LanguageModel {
            cfg,
            vocab,
            store,
            embedding,
            layers,
            final_ln,
            head,
            domain_tag: domain_tag.to_string(),
            lineage,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// Marks every parameter frozen; frozen parameters bind as constants.
    pub fn freeze(&mut self) {
        self.store.set_frozen(true);
    }

    pub fn is_frozen(&self) -> bool {
        self.store.iter().all(|p| p.frozen)
    }

    /// Final hidden states `[n×d]` for a history that starts with sos.
    pub fn hidden<'t>(&self, tape: &'t Tape<F>, ids: &[usize]) -> Result<Var<'t, F>> {
        self.hidden_in(Ctx::new(tape, &self.store), ids)
    }

    /// Raw logits `[n×V]`; row `i` conditions on `ids[..=i]` only.
    pub fn forward<'t>(&self, tape: &'t Tape<F>, ids: &[usize]) -> Result<Var<'t, F>> {
        self.forward_in(Ctx::new(tape, &self.store), ids)
    }

    /// As [`Self::hidden`], reading parameters from `cx` (same layout).
    pub fn hidden_in<'t>(&self, cx: Ctx<'t, '_, F>, ids: &[usize]) -> Result<Var<'t, F>> {
        if ids.is_empty() {
            return Err(Error::Contract("LM input must be non-empty".into()));
        }
        self.vocab.check(ids)?;
        let mask = Mask::causal(ids.len());
        let mut h = embed_with_positions(cx, self.embedding, ids)?.dropout();
        for layer in &self.layers {
            h = layer.forward(cx, h, &mask, None)?;
        }
        self.final_ln.forward(cx, h)
    }

    pub fn forward_in<'t>(&self, cx: Ctx<'t, '_, F>, ids: &[usize]) -> Result<Var<'t, F>> {
        let h = self.hidden_in(cx, ids)?;
        self.head.forward(cx, h)
    }

    /// Logits on an evaluation tape.
    pub fn logits(&self, ids: &[usize]) -> Result<Tensor<F>> {
        let tape = Tape::new();
        Ok(self.forward(&tape, ids)?.value().as_ref().clone())
    }

    /// `log p(· | prefix)` where `prefix` excludes the leading sos.
    pub fn next_log_probs(&self, prefix: &[usize]) -> Result<Vec<F>> {
        let mut ids = Vec::with_capacity(prefix.len() + 1);
        ids.push(SOS);
        ids.extend_from_slice(prefix);
        let lp = log_softmax_rows(&self.logits(&ids)?)?;
        Ok(lp.row(lp.rows() - 1).to_vec())
    }

    /// `Σ_i log p(y_i | y_<i)`, plus the eos term when `with_eos`.
    pub fn sequence_logprob(&self, tokens: &[usize], with_eos: bool) -> Result<f64> {
        if tokens.is_empty() && !with_eos {
            return Err(Error::Contract("empty sequence".into()));
        }
        let mut ids = vec![SOS];
        ids.extend_from_slice(tokens);
        let lp = log_softmax_rows(&self.logits(&ids)?)?;
        let mut targets = tokens.to_vec();
        if with_eos {
            targets.push(EOS);
        }
        Ok(targets
            .iter()
            .enumerate()
            .map(|(i, &y)| lp.row(i)[y].to_f64c())
            .sum())
    }

    /// `exp(−Σ log p / Σ (N+1))` with eos included.
    pub fn perplexity(&self, corpus: &[Vec<usize>]) -> Result<f64> {
        let (mut nll, mut n) = (0.0, 0usize);
        for s in corpus {
            nll -= self.sequence_logprob(s, true)?;
            n += s.len() + 1;
        }
        if n == 0 {
            return Err(Error::Contract("empty corpus".into()));
        }
        Ok((nll / n as f64).exp())
    }

    /// Summed next-token cross-entropy of one sentence (sos-prefixed history,
    /// eos-suffixed targets) and its token count.
    pub fn sentence_loss<'t>(&self, cx: Ctx<'t, '_, F>, tokens: &[usize]) -> Result<(Var<'t, F>, f64)> {
        let mut ids = vec![SOS];
        ids.extend_from_slice(tokens);
        let mut targets = tokens.to_vec();
        targets.push(EOS);
        let logits = self.forward_in(cx, &ids)?;
        Ok((cross_entropy(logits, &targets, 0.0)?, targets.len() as f64))
    }

    pub fn cast<G: Real>(&self) -> LanguageModel<G> {
        LanguageModel {
            cfg: self.cfg.clone(),
            vocab: self.vocab.clone(),
            store: self.store.cast(),
            embedding: self.embedding,
            layers: self.layers.clone(),
            final_ln: self.final_ln.clone(),
            head: self.head.clone(),
            domain_tag: self.domain_tag.clone(),
            lineage: self.lineage,
        }
    }
}

fn fit<F: Real>(lm: &mut LanguageModel<F>, corpus: &[Vec<usize>], tc: &TrainConfig) -> Result<Vec<EpochStats>> {
    for s in corpus {
        lm.vocab.check(s)?;
    }
    let frozen: Vec<bool> = lm.store.iter().map(|p| p.frozen).collect();
    lm.store.set_frozen(false);
    let tc = TrainConfig {
        dropout: lm.cfg.dropout,
        ..tc.clone()
    };
    let snapshot = lm.clone();
    let tag = lm.domain_tag.clone();
    let hist = train(
        &mut lm.store,
        corpus.len(),
        &tc,
        |tape, ps, i| snapshot.sentence_loss(Ctx::new(tape, ps), &corpus[i]),
        |s| info!("lm[{tag}] epoch {} loss {:.4}", s.epoch, s.mean_loss),
    )?;
    for (id, f) in lm.store.ids().collect::<Vec<_>>().into_iter().zip(frozen) {
        lm.store.get_mut(id).frozen = f;
    }
    Ok(hist)
}

/// Checks that `lm` can serve as the internal LM of a model built for
/// `vocab` and `d_model`. A different lineage only warns.
pub fn check_replacement<F: Real>(
    vocab: &Vocabulary,
    d_model: usize,
    lineage: Option<u64>,
    lm: &LanguageModel<F>,
) -> Result<()> {
    if lm.vocab.hash() != vocab.hash() {
        return Err(Error::IncompatibleLm(format!(
            "vocabulary hash {:016x} differs from the model's {:016x}",
            lm.vocab.hash(),
            vocab.hash()
        )));
    }
    if lm.cfg.d_model != d_model {
        return Err(Error::IncompatibleLm(format!(
            "LM width {} differs from the model's {d_model}",
            lm.cfg.d_model
        )));
    }
    if let Some(l) = lineage {
        if l != lm.lineage {
            warn!(
                "LM '{}' was not fine-tuned from the model's source LM (lineage {:016x} vs {l:016x})",
                lm.domain_tag, lm.lineage
            );
        }
    }
    Ok(())
}

/// Trains a fresh LM on a text corpus.
pub fn lm_train(
    vocab: &Vocabulary,
    corpus: &[Vec<usize>],
    cfg: &AttentionConfig,
    tc: &TrainConfig,
    domain_tag: &str,
) -> Result<(LanguageModel, Vec<EpochStats>)> {
    if corpus.is_empty() {
        return Err(Error::Contract("LM corpus is empty".into()));
    }
    let mut lm = LanguageModel::new(vocab.clone(), cfg.clone(), tc.seed, domain_tag)?;
    let hist = fit(&mut lm, corpus, tc)?;
    Ok((lm, hist))
}

/// Continues training `lm` on another corpus. The result keeps the parent's
/// lineage, which is what makes it a valid replacement internal LM.
pub fn lm_finetune(
    lm: &LanguageModel,
    vocab: &Vocabulary,
    corpus: &[Vec<usize>],
    tc: &TrainConfig,
    domain_tag: &str,
) -> Result<(LanguageModel, Vec<EpochStats>)> {
    if vocab.hash() != lm.vocab.hash() {
        return Err(Error::IncompatibleLm(format!(
            "vocabulary hash {:016x} differs from the LM's {:016x}",
            vocab.hash(),
            lm.vocab.hash()
        )));
    }
    let mut out = lm.clone();
    out.domain_tag = domain_tag.to_string();
    if tc.epochs == 0 {
        return Ok((out, Vec::new()));
    }
    if corpus.is_empty() {
        return Err(Error::Contract("LM corpus is empty".into()));
    }
    let hist = fit(&mut out, corpus, tc)?;
    Ok((out, hist))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::AdamConfig;

    fn tiny() -> AttentionConfig {
        AttentionConfig {
            d_model: 16,
            heads: 2,
            d_ff: 32,
            n_layers: 1,
            dropout: 0.0,
        }
    }

    fn tc(epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 8,
            adam: AdamConfig {
                lr: 3e-3,
                warmup: 10,
                ..AdamConfig::default()
            },
            seed,
            dropout: 0.0,
        }
    }

    #[test]
    fn untrained_lm_is_uniform() {
        let v = Vocabulary::synthetic(4);
        let lm = LanguageModel::<f64>::new(v.clone(), tiny(), 0, "x").unwrap();
        let l = lm.logits(&[SOS, 4, 5]).unwrap();
        assert!(l.data().iter().all(|&x| x == 0.0));
        let lp = lm.sequence_logprob(&[4, 5, 6], false).unwrap();
        assert!((lp + 3.0 * (v.len() as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn logits_are_causal() {
        let v = Vocabulary::synthetic(4);
        let mut lm = LanguageModel::<f32>::new(v, tiny(), 3, "x").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let head = Tensor::from_fn(&[16, 8], |_| rand::Rng::gen_range(&mut rng, -1.0..1.0));
        lm.store.set_value(lm.head.w, head).unwrap();
        let a = lm.logits(&[SOS, 4, 5, 6]).unwrap();
        let b = lm.logits(&[SOS, 4, 7, 7]).unwrap();
        assert_eq!(a.row(0), b.row(0));
        assert_eq!(a.row(1), b.row(1));
        assert_ne!(a.row(2), b.row(2));
    }

    #[test]
    fn learns_alternation() {
        let v = Vocabulary::synthetic(2);
        let corpus: Vec<Vec<usize>> = (0..64).map(|i| (0..6 + i % 3).map(|j| 4 + j % 2).collect()).collect();
        let (lm, hist) = lm_train(&v, &corpus, &tiny(), &tc(15, 1), "ab").unwrap();
        assert!(hist.last().unwrap().mean_loss < hist[0].mean_loss);
        let lp = lm.next_log_probs(&[4, 5, 4]).unwrap();
        assert!(lp[5].exp() >= 0.9, "p(b|a) = {}", lp[5].exp());
    }

    #[test]
    fn single_symbol_corpus_loss_decreases() {
        let v = Vocabulary::synthetic(2);
        let corpus = vec![vec![4]; 32];
        let (_, hist) = lm_train(&v, &corpus, &tiny(), &tc(5, 2), "one").unwrap();
        for w in hist.windows(2) {
            assert!(w[1].mean_loss < w[0].mean_loss, "{hist:?}");
        }
    }

    #[test]
    fn training_is_deterministic_and_finetune_zero_is_identity() {
        let v = Vocabulary::synthetic(3);
        let corpus: Vec<Vec<usize>> = (0..20).map(|i| vec![4 + i % 3, 4 + (i + 1) % 3]).collect();
        let (a, _) = lm_train(&v, &corpus, &tiny(), &tc(2, 5), "s").unwrap();
        let (b, _) = lm_train(&v, &corpus, &tiny(), &tc(2, 5), "s").unwrap();
        assert!(a.store.values_equal(&b.store));
        let (c, _) = lm_finetune(&a, &v, &corpus, &tc(0, 1), "t").unwrap();
        assert!(c.store.values_equal(&a.store));
        assert_eq!(c.domain_tag, "t");
        assert_eq!(c.lineage, a.lineage);
        let other = Vocabulary::synthetic(4);
        assert!(matches!(
            lm_finetune(&a, &other, &corpus, &tc(1, 1), "t"),
            Err(Error::IncompatibleLm(_))
        ));
        assert!(lm_train(&v, &[], &tiny(), &tc(1, 1), "s").is_err());
    }

    #[test]
    fn frozen_state_survives_finetune() {
        let v = Vocabulary::synthetic(3);
        let corpus: Vec<Vec<usize>> = (0..8).map(|i| vec![4 + i % 3]).collect();
        let (mut a, _) = lm_train(&v, &corpus, &tiny(), &tc(1, 5), "s").unwrap();
        a.freeze();
        let (b, _) = lm_finetune(&a, &v, &corpus, &tc(1, 1), "t").unwrap();
        assert!(b.is_frozen());
        assert!(!b.store.values_equal(&a.store));
    }
}
