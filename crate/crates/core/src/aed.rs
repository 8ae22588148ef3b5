//! Attention-based encoder-decoder models: the standard interleaved decoder,
//! the Preformer layout, and the decoupled decoder whose acoustic cross-layer
//! stack is summed with the logits of a frozen, replaceable LM.

use std::cell::RefCell;
use std::collections::HashMap;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ctc::ctc_loss;
use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::lm::{check_replacement, LanguageModel};
use crate::nn::{
    embed_from, embed_with_positions, AttentionConfig, Ctx, DecoderLayer, Encoder, LayerKind, LayerNorm, Linear, Mask,
    MaskKind,
};
use crate::tensor::{cross_entropy, cst, log_softmax_rows, ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::train::{train, EpochStats, TrainConfig};
use crate::vocab::{Vocabulary, BLANK, EOS, SOS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AedVariant {
    /// Self-attention, cross-attention and feed-forward in every layer.
    Standard,
    /// `N` self-layers followed by `N` cross-layers.
    Preformer,
    /// Cross-layer acoustic stack plus a frozen internal LM.
    Decoupled,
}

#[derive(Clone, Debug)]
pub struct AedConfig {
    pub attn: AttentionConfig,
    pub d_feat: usize,
    pub variant: AedVariant,
    pub mask: MaskKind,
    /// CTC weight γ.
    pub gamma: f64,
    /// Weight η of the combined-logit CE against the auxiliary acoustic CE.
    pub eta: f64,
    /// LM logit weight β.
    pub beta: f64,
    pub label_smoothing: f64,
    /// Cross-layers carry a feed-forward sub-layer after the cross-attention.
    pub cross_ff: bool,
    /// On LM replacement, also replace the acoustic-stack embedding.
    pub swap_embeddings: bool,
}

impl Default for AedConfig {
    fn default() -> Self {
        AedConfig {
            attn: AttentionConfig::default(),
            d_feat: 16,
            variant: AedVariant::Decoupled,
            mask: MaskKind::None,
            gamma: 0.3,
            eta: 0.5,
            beta: 0.5,
            label_smoothing: 0.1,
            cross_ff: true,
            swap_embeddings: false,
        }
    }
}

impl AedConfig {
    pub fn validate(&self) -> Result<()> {
        self.attn.validate()?;
        for (name, w) in [("gamma", self.gamma), ("eta", self.eta), ("label_smoothing", self.label_smoothing)] {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::Config(format!("{name} = {w} outside [0,1]")));
            }
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta = {} must be finite and ≥ 0", self.beta)));
        }
        if self.d_feat == 0 {
            return Err(Error::Config("d_feat must be positive".into()));
        }
        Ok(())
    }
}

/// `ac + β·lm`.
pub fn combine_dec_logits<F: Real>(ac: &[F], lm: &[F], beta: f64) -> Result<Vec<F>> {
    if ac.len() != lm.len() {
        return Err(Error::shape("combine_dec_logits", &[ac.len()], &[lm.len()]));
    }
    if beta == 0.0 {
        return Ok(ac.to_vec());
    }
    let b: F = cst(beta);
    Ok(ac.iter().zip(lm).map(|(&a, &l)| a + b * l).collect())
}

fn combine_dec_vars<'t, F: Real>(ac: Var<'t, F>, lm: Var<'t, F>, beta: f64) -> Result<Var<'t, F>> {
    if ac.shape() != lm.shape() {
        return Err(Error::shape("combine_dec_logits", &ac.shape(), &lm.shape()));
    }
    if beta == 0.0 {
        return Ok(ac);
    }
    ac.add(lm.scale(cst(beta)))
}

#[derive(Clone, Debug)]
pub enum AedDecoder {
    Standard {
        emb: ParamId,
        layers: Vec<DecoderLayer>,
        ln: LayerNorm,
        head: Linear,
    },
    Preformer {
        emb: ParamId,
        self_layers: Vec<DecoderLayer>,
        cross_layers: Vec<DecoderLayer>,
        ln: LayerNorm,
        head: Linear,
    },
    /// `emb` is a frozen copy of the internal LM's embedding table.
    Decoupled {
        emb: ParamId,
        cross_layers: Vec<DecoderLayer>,
        ln: LayerNorm,
        head: Linear,
    },
}

/// Per-utterance loss components. CE terms are sums over the `tokens`
/// teacher-forced positions.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AedLossParts {
    pub total: f64,
    pub ctc: f64,
    pub ce: f64,
    pub ce_aux: f64,
    pub tokens: usize,
}

#[derive(Clone, Debug)]
pub struct AedModel<F: Real = f32> {
    pub cfg: AedConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore<F>,
    pub encoder: Encoder,
    pub ctc_head: Linear,
    pub decoder: AedDecoder,
    /// Frozen internal LM (decoupled variant only).
    pub lm: Option<LanguageModel<F>>,
    pub source_lineage: Option<u64>,
}

fn cross_stack<F: Real>(
    store: &mut ParamStore<F>,
    cfg: &AedConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<DecoderLayer> {
    (0..cfg.attn.n_layers)
        .map(|l| DecoderLayer::new(store, &format!("dec.cross{l}"), LayerKind::CrossOnly, &cfg.attn, cfg.cross_ff, rng))
        .collect()
}

impl<F: Real> AedModel<F> {
    /// The decoupled variant requires `lm`, which becomes the frozen internal
    /// LM. For the Preformer, `lm` (optional) initialises the embedding and
    /// self-layers, which stay trainable.
    pub fn new(cfg: AedConfig, vocab: Vocabulary, lm: Option<LanguageModel<F>>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = cfg.attn.d_model;
        let v = vocab.len();
        let encoder = Encoder::new(&mut store, "enc", cfg.d_feat, &cfg.attn, &mut rng);
        let ctc_head = Linear::new(&mut store, "ctc", d, v, &mut rng);
        let emb_std = 1.0 / (d as f64).sqrt();
        let (decoder, lm) = match cfg.variant {
            AedVariant::Standard => {
                let emb = store.add_normal("dec.emb", &[v, d], emb_std, &mut rng);
                let layers = (0..cfg.attn.n_layers)
                    .map(|l| {
                        DecoderLayer::new(&mut store, &format!("dec.l{l}"), LayerKind::Interleaved, &cfg.attn, true, &mut rng)
                    })
                    .collect();
                let ln = LayerNorm::new(&mut store, "dec.ln_out", d);
                let head = Linear::new(&mut store, "dec.head", d, v, &mut rng);
                (AedDecoder::Standard { emb, layers, ln, head }, None)
            }
            AedVariant::Preformer => {
                let emb = store.add_normal("dec.emb", &[v, d], emb_std, &mut rng);
                let self_layers = (0..cfg.attn.n_layers)
                    .map(|l| {
                        DecoderLayer::new(&mut store, &format!("dec.self{l}"), LayerKind::SelfOnly, &cfg.attn, true, &mut rng)
                    })
                    .collect();
                let cross_layers = cross_stack(&mut store, &cfg, &mut rng);
                let ln = LayerNorm::new(&mut store, "dec.ln_out", d);
                let head = Linear::new(&mut store, "dec.head", d, v, &mut rng);
                if let Some(lm) = &lm {
                    check_replacement(&vocab, d, None, lm)?;
                    if lm.cfg.n_layers != cfg.attn.n_layers || lm.cfg.d_ff != cfg.attn.d_ff {
                        return Err(Error::IncompatibleLm("LM layer layout differs from the self-layers".into()));
                    }
                    store.copy_from(&lm.store, |name| {
                        if name == "lm.emb" {
                            Some("dec.emb".into())
                        } else {
                            let rest = name.strip_prefix("lm.l")?;
                            rest.starts_with(|c: char| c.is_ascii_digit()).then(|| format!("dec.self{rest}"))
                        }
                    })?;
                }
                (
                    AedDecoder::Preformer {
                        emb,
                        self_layers,
                        cross_layers,
                        ln,
                        head,
                    },
                    None,
                )
            }
            AedVariant::Decoupled => {
                let mut lm = lm.ok_or_else(|| Error::Missing("decoupled AED needs an internal LM".into()))?;
                check_replacement(&vocab, d, None, &lm)?;
                lm.freeze();
                let emb = store.add("dec.emb", lm.store.value(lm.embedding).clone());
                store.get_mut(emb).frozen = true;
                let cross_layers = cross_stack(&mut store, &cfg, &mut rng);
                let ln = LayerNorm::new(&mut store, "dec.ln_out", d);
                let head = Linear::new(&mut store, "dec.head", d, v, &mut rng);
                (
                    AedDecoder::Decoupled {
                        emb,
                        cross_layers,
                        ln,
                        head,
                    },
                    Some(lm),
                )
            }
        };
        let source_lineage = lm.as_ref().map(|l| l.lineage);
        Ok(AedModel {
            cfg,
            vocab,
            store,
            encoder,
            ctc_head,
            decoder,
            lm,
            source_lineage,
        })
    }

    pub fn is_decoupled(&self) -> bool {
        self.cfg.variant == AedVariant::Decoupled
    }

    pub fn encode<'t>(&self, cx: Ctx<'t, '_, F>, frames: &Tensor<F>) -> Result<Var<'t, F>> {
        self.encoder.forward(cx, frames, self.cfg.mask)
    }

    /// `logits^AC` of the decoupled acoustic stack for history tokens `ids`
    /// placed at positions `start..`. Each row depends on its own token,
    /// position and `h_enc` only.
    pub fn acoustic_stack<'t>(
        &self,
        cx: Ctx<'t, '_, F>,
        ids: &[usize],
        start: usize,
        h_enc: Option<Var<'t, F>>,
    ) -> Result<Var<'t, F>> {
        let AedDecoder::Decoupled {
            emb,
            cross_layers,
            ln,
            head,
        } = &self.decoder
        else {
            return Err(Error::Contract("acoustic stack exists only in the decoupled decoder".into()));
        };
        let h_enc = h_enc.ok_or_else(|| Error::Contract("decoder needs an encoder output".into()))?;
        self.vocab.check(ids)?;
        let unused = Mask::none(ids.len(), ids.len());
        let mut x = embed_from(cx, *emb, ids, start)?.dropout();
        for l in cross_layers {
            x = l.forward(cx, x, &unused, Some(h_enc))?;
        }
        head.forward(cx, ln.forward(cx, x)?)
    }

    /// Teacher-forced decoder logits `[n×V]` for `ids = [sos, y…]`:
    /// the full decoder output for standard and Preformer models, `logits^AC`
    /// for the decoupled one.
    pub fn decoder_logits<'t>(&self, cx: Ctx<'t, '_, F>, ids: &[usize], h_enc: Option<Var<'t, F>>) -> Result<Var<'t, F>> {
        let h_enc = h_enc.ok_or_else(|| Error::Contract("decoder needs an encoder output".into()))?;
        self.vocab.check(ids)?;
        let causal = Mask::causal(ids.len());
        match &self.decoder {
            AedDecoder::Standard { emb, layers, ln, head } => {
                let mut x = embed_with_positions(cx, *emb, ids)?.dropout();
                for l in layers {
                    x = l.forward(cx, x, &causal, Some(h_enc))?;
                }
                head.forward(cx, ln.forward(cx, x)?)
            }
            AedDecoder::Preformer {
                emb,
                self_layers,
                cross_layers,
                ln,
                head,
            } => {
                let mut x = embed_with_positions(cx, *emb, ids)?.dropout();
                for l in self_layers {
                    x = l.forward(cx, x, &causal, None)?;
                }
                for l in cross_layers {
                    x = l.forward(cx, x, &causal, Some(h_enc))?;
                }
                head.forward(cx, ln.forward(cx, x)?)
            }
            AedDecoder::Decoupled { .. } => self.acoustic_stack(cx, ids, 0, Some(h_enc)),
        }
    }

    /// Internal-LM logits `[(N+1)×V]` for history `[sos, y]`.
    pub fn internal_lm_logits(&self, y: &[usize]) -> Result<Option<Tensor<F>>> {
        let Some(lm) = &self.lm else { return Ok(None) };
        let mut ids = vec![SOS];
        ids.extend_from_slice(y);
        lm.logits(&ids).map(Some)
    }

    /// `γ·L_ctc + (1−γ)·(η·CE(logits^Dec) + (1−η)·CE(logits^AC))` for the
    /// decoupled decoder and `γ·L_ctc + (1−γ)·CE(logits)` otherwise, with CE
    /// summed over the `N+1` targets `[y, eos]`.
    pub fn loss<'t>(
        &self,
        cx: Ctx<'t, '_, F>,
        frames: &Tensor<F>,
        y: &[usize],
        lm_logits: Option<Var<'t, F>>,
    ) -> Result<(Var<'t, F>, AedLossParts)> {
        self.vocab.check(y)?;
        let gamma = self.cfg.gamma;
        let eps = self.cfg.label_smoothing;
        let h = self.encode(cx, frames)?;
        let mut parts = AedLossParts {
            tokens: y.len() + 1,
            ..AedLossParts::default()
        };
        let mut terms: Vec<Var<'t, F>> = Vec::new();
        if gamma > 0.0 {
            let lp = self.ctc_head.forward(cx, h)?.log_softmax()?;
            let l = ctc_loss(lp, y, BLANK)?;
            parts.ctc = l.value().item().to_f64c();
            terms.push(l.scale(cst(gamma)));
        }
        if gamma < 1.0 {
            let mut ids = vec![SOS];
            ids.extend_from_slice(y);
            let mut targets = y.to_vec();
            targets.push(EOS);
            let ac = self.decoder_logits(cx, &ids, Some(h))?;
            let (w_dec, w_ac) = if self.is_decoupled() {
                (self.cfg.eta, 1.0 - self.cfg.eta)
            } else {
                (0.0, 1.0)
            };
            if w_dec > 0.0 {
                let lm = lm_logits.ok_or_else(|| Error::Missing("internal LM logits".into()))?;
                let dec = combine_dec_vars(ac, lm, self.cfg.beta)?;
                let l = cross_entropy(dec, &targets, eps)?;
                parts.ce = l.value().item().to_f64c();
                terms.push(l.scale(cst((1.0 - gamma) * w_dec)));
            }
            if w_ac > 0.0 {
                let l = cross_entropy(ac, &targets, eps)?;
                parts.ce_aux = l.value().item().to_f64c();
                terms.push(l.scale(cst((1.0 - gamma) * w_ac)));
            }
        }
        let mut total = terms[0];
        for t in &terms[1..] {
            total = total.add(*t)?;
        }
        parts.total = total.value().item().to_f64c();
        Ok((total, parts))
    }

    /// Swaps the internal LM, returning the previous one.
    pub fn replace_internal_lm(&mut self, mut lm: LanguageModel<F>) -> Result<LanguageModel<F>> {
        if !self.is_decoupled() {
            return Err(Error::IncompatibleLm("model has no internal LM".into()));
        }
        check_replacement(&self.vocab, self.cfg.attn.d_model, self.source_lineage, &lm)?;
        lm.freeze();
        if self.cfg.swap_embeddings {
            if let AedDecoder::Decoupled { emb, .. } = self.decoder {
                self.store.set_value(emb, lm.store.value(lm.embedding).clone())?;
            }
        }
        Ok(self.lm.replace(lm).expect("decoupled model has an LM"))
    }

    pub fn cast<G: Real>(&self) -> AedModel<G> {
        AedModel {
            cfg: self.cfg.clone(),
            vocab: self.vocab.clone(),
            store: self.store.cast(),
            encoder: self.encoder.clone(),
            ctc_head: self.ctc_head.clone(),
            decoder: self.decoder.clone(),
            lm: self.lm.as_ref().map(|l| l.cast()),
            source_lineage: self.source_lineage,
        }
    }

    /// Decoding view of one utterance. `beta` overrides the LM weight; 0
    /// gives acoustic-only decoding.
    pub fn session(&self, frames: &Tensor<F>, beta: Option<f64>) -> Result<AedSession<'_, F>> {
        if frames.rows() == 0 {
            return Err(Error::Contract("empty encoder input".into()));
        }
        let beta = beta.unwrap_or(self.cfg.beta);
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!("beta = {beta} must be finite and ≥ 0")));
        }
        let tape = Tape::new();
        let cx = Ctx::new(&tape, &self.store);
        let h = self.encode(cx, frames)?;
        let ctc = log_softmax_rows(&self.ctc_head.forward(cx, h)?.value())?;
        let ctc_lp = Tensor::from_fn(ctc.shape(), |i| ctc.data()[i].to_f64c());
        Ok(AedSession {
            model: self,
            h_enc: h.value().as_ref().clone(),
            ctc_lp,
            beta,
            cache: RefCell::new(HashMap::new()),
        })
    }
}

impl AedModel<f32> {
    /// Trains on `data`; the internal LM stays frozen. Each step minimises
    /// the summed loss over the batch divided by its target count.
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
                let (l, p) = arch.loss(Ctx::new(tape, ps), &data[i].frames, &data[i].tokens, lm)?;
                Ok((l, p.tokens as f64))
            },
            |s| info!("aed[{name}] epoch {} loss {:.4}", s.epoch, s.mean_loss),
        )
    }
}

/// Decoding state for one utterance: encoder output, CTC posteriors and a
/// per-history cache of decoder log-probabilities.
pub struct AedSession<'m, F: Real> {
    model: &'m AedModel<F>,
    h_enc: Tensor<F>,
    ctc_lp: Tensor<f64>,
    beta: f64,
    cache: RefCell<HashMap<Vec<usize>, Vec<f64>>>,
}

impl<F: Real> AedSession<'_, F> {
    /// CTC log-posteriors `[T×V]`.
    pub fn ctc_log_probs(&self) -> &Tensor<f64> {
        &self.ctc_lp
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Raw decoder logits of the next token after `hist` (sos excluded).
    pub fn next_logits(&self, hist: &[usize]) -> Result<Vec<F>> {
        let m = self.model;
        let tape = Tape::new();
        let cx = Ctx::new(&tape, &m.store);
        let h = tape.constant(self.h_enc.clone());
        let ids: Vec<usize> = std::iter::once(SOS).chain(hist.iter().copied()).collect();
        if !m.is_decoupled() {
            let l = m.decoder_logits(cx, &ids, Some(h))?.value();
            return Ok(l.row(l.rows() - 1).to_vec());
        }
        let last = ids[ids.len() - 1];
        let ac = m.acoustic_stack(cx, &[last], ids.len() - 1, Some(h))?.value();
        if self.beta == 0.0 {
            return Ok(ac.row(0).to_vec());
        }
        let lm = m.lm.as_ref().expect("decoupled model has an LM").logits(&ids)?;
        combine_dec_logits(ac.row(0), lm.row(lm.rows() - 1), self.beta)
    }

    /// `log softmax` of [`Self::next_logits`], cached per history.
    pub fn log_probs(&self, hist: &[usize]) -> Result<Vec<f64>> {
        if let Some(lp) = self.cache.borrow().get(hist) {
            return Ok(lp.clone());
        }
        let logits = self.next_logits(hist)?;
        let row = Tensor::new(vec![1, logits.len()], logits)?;
        let lp: Vec<f64> = log_softmax_rows(&row)?.data().iter().map(|x| x.to_f64c()).collect();
        self.cache.borrow_mut().insert(hist.to_vec(), lp.clone());
        Ok(lp)
    }
}
