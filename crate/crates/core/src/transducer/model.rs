use std::cell::RefCell;
use std::collections::HashMap;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{combine_nt_lattice, combine_nt_logits, transducer_loss, Joint};
use crate::ctc::ctc_loss;
use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::lm::{check_replacement, LanguageModel};
use crate::nn::{embed_with_positions, AttentionConfig, Ctx, DecoderLayer, Encoder, LayerKind, LayerNorm, Linear, Mask, MaskKind};
use crate::tensor::{cst, log_softmax_rows, ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::train::{train, EpochStats, TrainConfig};
use crate::vocab::{Vocabulary, BLANK, SOS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredKind {
    /// Embedding of the previous token only.
    Stateless,
    /// Causal self-attention stack over the sos-prefixed history.
    Transformer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransducerVariant {
    /// Stateless prediction network on the frozen LM embedding, with the
    /// internal LM logits added to the non-blank joint logits.
    Decoupled,
    Standard(PredKind),
}

#[derive(Clone, Debug)]
pub struct TransducerConfig {
    pub attn: AttentionConfig,
    pub d_feat: usize,
    pub d_joint: usize,
    pub variant: TransducerVariant,
    pub mask: MaskKind,
    /// CTC weight λ.
    pub lambda: f64,
    /// Weight η′ of the combined-logit loss against the acoustic-only one.
    pub eta: f64,
    /// Doubles the blank logit in the combined logits.
    pub double_blank: bool,
    /// On LM replacement, also replace the prediction embedding.
    pub swap_embeddings: bool,
}

impl Default for TransducerConfig {
    fn default() -> Self {
        TransducerConfig {
            attn: AttentionConfig::default(),
            d_feat: 16,
            d_joint: 64,
            variant: TransducerVariant::Decoupled,
            mask: MaskKind::None,
            lambda: 0.3,
            eta: 0.5,
            double_blank: true,
            swap_embeddings: false,
        }
    }
}

impl TransducerConfig {
    pub fn validate(&self) -> Result<()> {
        self.attn.validate()?;
        for (name, w) in [("lambda", self.lambda), ("eta", self.eta)] {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::Config(format!("{name} = {w} outside [0,1]")));
            }
        }
        if self.d_joint == 0 || self.d_feat == 0 {
            return Err(Error::Config("d_joint and d_feat must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub enum Prediction {
    Stateless { emb: ParamId },
    Transformer {
        emb: ParamId,
        layers: Vec<DecoderLayer>,
        ln: LayerNorm,
    },
}

impl Prediction {
    /// `[(N+1)×d]` for `ids = [sos, y1, …, yN]`; row `u` depends on `ids[..=u]`.
    pub fn forward<'t, F: Real>(&self, cx: Ctx<'t, '_, F>, ids: &[usize]) -> Result<Var<'t, F>> {
        match self {
            Prediction::Stateless { emb } => cx.p(*emb).gather(ids),
            Prediction::Transformer { emb, layers, ln } => {
                let mask = Mask::causal(ids.len());
                let mut h = embed_with_positions(cx, *emb, ids)?.dropout();
                for l in layers {
                    h = l.forward(cx, h, &mask, None)?;
                }
                ln.forward(cx, h)
            }
        }
    }

    pub fn is_stateless(&self) -> bool {
        matches!(self, Prediction::Stateless { .. })
    }
}

/// Per-utterance loss components (plain values).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TransducerLossParts {
    pub total: f64,
    pub ctc: f64,
    pub nt: f64,
    pub ac: f64,
}

#[derive(Clone, Debug)]
pub struct TransducerModel<F: Real = f32> {
    pub cfg: TransducerConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore<F>,
    pub encoder: Encoder,
    pub ctc_head: Linear,
    pub pred: Prediction,
    pub joint: Joint,
    /// Frozen internal LM (decoupled variant only).
    pub lm: Option<LanguageModel<F>>,
    /// Lineage of the LM the model was trained with.
    pub source_lineage: Option<u64>,
}

impl<F: Real> TransducerModel<F> {
    pub fn new(cfg: TransducerConfig, vocab: Vocabulary, lm: Option<LanguageModel<F>>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = cfg.attn.d_model;
        let v = vocab.len();
        let encoder = Encoder::new(&mut store, "enc", cfg.d_feat, &cfg.attn, &mut rng);
        let ctc_head = Linear::new(&mut store, "ctc", d, v, &mut rng);
        let (pred, lm) = match cfg.variant {
            TransducerVariant::Decoupled => {
                let mut lm = lm.ok_or_else(|| Error::Missing("decoupled transducer needs an internal LM".into()))?;
                check_replacement(&vocab, d, None, &lm)?;
                lm.freeze();
                let emb = store.add("pred.emb", lm.store.value(lm.embedding).clone());
                store.get_mut(emb).frozen = true;
                (Prediction::Stateless { emb }, Some(lm))
            }
            TransducerVariant::Standard(PredKind::Stateless) => {
                let emb = store.add_normal("pred.emb", &[v, d], 1.0, &mut rng);
                (Prediction::Stateless { emb }, None)
            }
            TransducerVariant::Standard(PredKind::Transformer) => {
                let emb = store.add_normal("pred.emb", &[v, d], 1.0 / (d as f64).sqrt(), &mut rng);
                let layers = (0..cfg.attn.n_layers)
                    .map(|l| DecoderLayer::new(&mut store, &format!("pred.l{l}"), LayerKind::SelfOnly, &cfg.attn, true, &mut rng))
                    .collect();
                let ln = LayerNorm::new(&mut store, "pred.ln_out", d);
                (Prediction::Transformer { emb, layers, ln }, None)
            }
        };
        let joint = Joint::new(&mut store, "joint", d, cfg.d_joint, v, &mut rng);
        let source_lineage = lm.as_ref().map(|l| l.lineage);
        Ok(TransducerModel {
            cfg,
            vocab,
            store,
            encoder,
            ctc_head,
            pred,
            joint,
            lm,
            source_lineage,
        })
    }

    pub fn is_decoupled(&self) -> bool {
        self.cfg.variant == TransducerVariant::Decoupled
    }

    pub fn encode<'t>(&self, cx: Ctx<'t, '_, F>, frames: &Tensor<F>) -> Result<Var<'t, F>> {
        self.encoder.forward(cx, frames, self.cfg.mask)
    }

    /// Internal-LM logits `[(N+1)×V]` for history `[sos, y]` on an
    /// evaluation tape.
    pub fn internal_lm_logits(&self, y: &[usize]) -> Result<Option<Tensor<F>>> {
        let Some(lm) = &self.lm else { return Ok(None) };
        let mut ids = vec![SOS];
        ids.extend_from_slice(y);
        lm.logits(&ids).map(Some)
    }

    /// `λ·L_ctc + (1−λ)·(η′·L_nt(NT) + (1−η′)·L_nt(AC))` for the decoupled
    /// variant, `λ·L_ctc + (1−λ)·L_nt(AC)` otherwise. `lm_logits` is the
    /// internal-LM stream `[(N+1)×V]` (ignored by standard models).
    pub fn loss<'t>(
        &self,
        cx: Ctx<'t, '_, F>,
        frames: &Tensor<F>,
        y: &[usize],
        lm_logits: Option<Var<'t, F>>,
    ) -> Result<(Var<'t, F>, TransducerLossParts)> {
        self.vocab.check(y)?;
        let t_len = frames.rows();
        let lambda = self.cfg.lambda;
        let h = self.encode(cx, frames)?;
        let mut parts = TransducerLossParts::default();
        let mut terms: Vec<Var<'t, F>> = Vec::new();
        if lambda > 0.0 {
            let lp = self.ctc_head.forward(cx, h)?.log_softmax()?;
            let l = ctc_loss(lp, y, BLANK)?;
            parts.ctc = l.value().item().to_f64c();
            terms.push(l.scale(cst(lambda)));
        }
        if lambda < 1.0 {
            let mut ids = vec![SOS];
            ids.extend_from_slice(y);
            let hp = self.pred.forward(cx, &ids)?;
            let ac = self.joint.lattice(cx, h, hp)?;
            let (w_nt, w_ac) = if self.is_decoupled() {
                (self.cfg.eta, 1.0 - self.cfg.eta)
            } else {
                (0.0, 1.0)
            };
            if w_nt > 0.0 {
                let lm = lm_logits.ok_or_else(|| Error::Missing("internal LM logits".into()))?;
                let nt = combine_nt_lattice(ac, lm, BLANK, self.cfg.double_blank)?;
                let l = transducer_loss(nt.log_softmax()?, t_len, y, BLANK)?;
                parts.nt = l.value().item().to_f64c();
                terms.push(l.scale(cst((1.0 - lambda) * w_nt)));
            }
            if w_ac > 0.0 {
                let l = transducer_loss(ac.log_softmax()?, t_len, y, BLANK)?;
                parts.ac = l.value().item().to_f64c();
                terms.push(l.scale(cst((1.0 - lambda) * w_ac)));
            }
        }
        let mut total = terms[0];
        for t in &terms[1..] {
            total = total.add(*t)?;
        }
        parts.total = total.value().item().to_f64c();
        Ok((total, parts))
    }

    /// Swaps the internal LM, returning the previous one. Only the LM stream
    /// changes unless `swap_embeddings` is set.
    pub fn replace_internal_lm(&mut self, mut lm: LanguageModel<F>) -> Result<LanguageModel<F>> {
        if !self.is_decoupled() {
            return Err(Error::IncompatibleLm("model has no internal LM".into()));
        }
        check_replacement(&self.vocab, self.cfg.attn.d_model, self.source_lineage, &lm)?;
        lm.freeze();
        if self.cfg.swap_embeddings {
            if let Prediction::Stateless { emb } = self.pred {
                self.store.set_value(emb, lm.store.value(lm.embedding).clone())?;
            }
        }
        Ok(self.lm.replace(lm).expect("decoupled model has an LM"))
    }

    pub fn cast<G: Real>(&self) -> TransducerModel<G> {
        TransducerModel {
            cfg: self.cfg.clone(),
            vocab: self.vocab.clone(),
            store: self.store.cast(),
            encoder: self.encoder.clone(),
            ctc_head: self.ctc_head.clone(),
            pred: self.pred.clone(),
            joint: self.joint.clone(),
            lm: self.lm.as_ref().map(|l| l.cast()),
            source_lineage: self.source_lineage,
        }
    }

    /// Decoding view with cached encoder projections.
    pub fn session(&self, frames: &Tensor<F>, acoustic_only: bool) -> Result<TransducerSession<'_, F>> {
        if frames.rows() == 0 {
            return Err(Error::Contract("empty encoder input".into()));
        }
        let tape = Tape::new();
        let cx = Ctx::new(&tape, &self.store);
        let h = self.encode(cx, frames)?;
        let e = self.joint.enc.forward(cx, h)?.value();
        Ok(TransducerSession {
            model: self,
            enc_proj: e.as_ref().clone(),
            acoustic_only: acoustic_only || !self.is_decoupled(),
            cache: RefCell::new(HashMap::new()),
        })
    }
}

impl TransducerModel<f32> {
    /// Trains on `data`; the internal LM stays frozen.
    pub fn fit(&mut self, data: &[Utterance], tc: &TrainConfig) -> Result<Vec<EpochStats>> {
        let lm_cache: Vec<Option<Tensor<f32>>> = data
            .iter()
            .map(|u| self.internal_lm_logits(&u.tokens))
            .collect::<Result<_>>()?;
        let tc = TrainConfig {
            dropout: self.cfg.attn.dropout,
            ..tc.clone()
        };
        let arch = self.clone();
        let name = format!("{:?}", self.cfg.variant);
        train(
            &mut self.store,
            data.len(),
            &tc,
            |tape, ps, i| {
                let lm = lm_cache[i].as_ref().map(|t| tape.constant(t.clone()));
                let (l, _) = arch.loss(Ctx::new(tape, ps), &data[i].frames, &data[i].tokens, lm)?;
                Ok((l, 1.0))
            },
            |s| info!("transducer[{name}] epoch {} loss {:.4}", s.epoch, s.mean_loss),
        )
    }
}

/// Decoding state for one utterance: encoder projections plus a per-history
/// cache of prediction projections and internal-LM logits.
pub struct TransducerSession<'m, F: Real> {
    model: &'m TransducerModel<F>,
    enc_proj: Tensor<F>,
    acoustic_only: bool,
    cache: RefCell<HashMap<Vec<usize>, (Vec<F>, Option<Vec<F>>)>>,
}

impl<F: Real> TransducerSession<'_, F> {
    pub fn frames(&self) -> usize {
        self.enc_proj.rows()
    }

    fn history_state(&self, hist: &[usize]) -> Result<(Vec<F>, Option<Vec<F>>)> {
        if let Some(s) = self.cache.borrow().get(hist) {
            return Ok(s.clone());
        }
        let m = self.model;
        let tape = Tape::new();
        let cx = Ctx::new(&tape, &m.store);
        let ids: Vec<usize> = match m.pred {
            Prediction::Stateless { .. } => vec![*hist.last().unwrap_or(&SOS)],
            Prediction::Transformer { .. } => std::iter::once(SOS).chain(hist.iter().copied()).collect(),
        };
        let hp = m.pred.forward(cx, &ids)?;
        let last = hp.shape()[0] - 1;
        let row = hp.value().row(last).to_vec();
        let row = tape.constant(Tensor::new(vec![1, row.len()], row)?);
        let pre = m.joint.pre.forward(cx, row)?.value().data().to_vec();
        let lm = if self.acoustic_only {
            None
        } else {
            let lm = m.lm.as_ref().expect("decoupled model has an LM");
            let ids: Vec<usize> = std::iter::once(SOS).chain(hist.iter().copied()).collect();
            let l = lm.logits(&ids)?;
            Some(l.row(l.rows() - 1).to_vec())
        };
        let state = (pre, lm);
        self.cache.borrow_mut().insert(hist.to_vec(), state.clone());
        Ok(state)
    }

    /// Log-probabilities over the vocabulary at frame `t` after emitting
    /// `hist`: from `logits^NT` for decoupled models, `logits^AC` otherwise or
    /// when acoustic-only.
    pub fn log_probs(&self, t: usize, hist: &[usize]) -> Result<Vec<f64>> {
        let (pre, lm) = self.history_state(hist)?;
        let ac = self.model.joint.node(&self.model.store, self.enc_proj.row(t), &pre);
        let logits = match lm {
            Some(l) => combine_nt_logits(&ac, &l, BLANK, self.model.cfg.double_blank)?,
            None => ac,
        };
        let row = Tensor::new(vec![1, logits.len()], logits)?;
        Ok(log_softmax_rows(&row)?.data().iter().map(|x| x.to_f64c()).collect())
    }
}
