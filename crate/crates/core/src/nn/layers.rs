use rand::Rng;

use super::{AttentionConfig, Ctx, Mask, MaskKind, MultiHeadAttention};
use crate::error::{Error, Result};
use crate::tensor::{cst, ParamId, ParamStore, Real, Tensor, Var};

const LN_EPS: f64 = 1e-5;

/// `x·W + b` with `W: [in×out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let std = 1.0 / (d_in as f64).sqrt();
        Linear {
            w: store.add_normal(format!("{name}.w"), &[d_in, d_out], std, rng),
            b: Some(store.add_zeros(format!("{name}.b"), &[d_out])),
        }
    }

    pub fn without_bias<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let std = 1.0 / (d_in as f64).sqrt();
        Linear {
            w: store.add_normal(format!("{name}.w"), &[d_in, d_out], std, rng),
            b: None,
        }
    }

    pub fn forward<'t, F: Real>(&self, cx: Ctx<'t, '_, F>, x: Var<'t, F>) -> Result<Var<'t, F>> {
        let y = x.matmul(cx.p(self.w))?;
        match self.b {
            Some(b) => y.add_row(cx.p(b)),
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub g: ParamId,
    pub b: ParamId,
}

impl LayerNorm {
    pub fn new<F: Real>(store: &mut ParamStore<F>, name: &str, d: usize) -> Self {
        LayerNorm {
            g: store.add_ones(format!("{name}.g"), &[d]),
            b: store.add_zeros(format!("{name}.b"), &[d]),
        }
    }

    pub fn forward<'t, F: Real>(&self, cx: Ctx<'t, '_, F>, x: Var<'t, F>) -> Result<Var<'t, F>> {
        x.layer_norm(cx.p(self.g), cx.p(self.b), LN_EPS)
    }
}

/// Position-wise `W2·gelu(W1·x)`.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub l1: Linear,
    pub l2: Linear,
}

impl FeedForward {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        cfg: &AttentionConfig,
        rng: &mut impl Rng,
    ) -> Self {
        FeedForward {
            l1: Linear::new(store, &format!("{name}.ff1"), cfg.d_model, cfg.d_ff, rng),
            l2: Linear::new(store, &format!("{name}.ff2"), cfg.d_ff, cfg.d_model, rng),
        }
    }

    pub fn forward<'t, F: Real>(&self, cx: Ctx<'t, '_, F>, x: Var<'t, F>) -> Result<Var<'t, F>> {
        let h = self.l1.forward(cx, x)?.gelu().dropout();
        self.l2.forward(cx, h)
    }
}

/// Sub-layer composition of a decoder-side block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    /// Self-attention then feed-forward.
    SelfOnly,
    /// Cross-attention over an external memory, then feed-forward.
    CrossOnly,
    /// Self-attention, cross-attention, feed-forward.
    Interleaved,
}

/// Pre-LayerNorm residual block: `x + drop(sub(LN(x)))` per sub-layer.
#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub kind: LayerKind,
    sa: Option<(LayerNorm, MultiHeadAttention)>,
    ca: Option<(LayerNorm, MultiHeadAttention)>,
    ff: Option<(LayerNorm, FeedForward)>,
}

impl DecoderLayer {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        kind: LayerKind,
        cfg: &AttentionConfig,
        with_ff: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let d = cfg.d_model;
        let sa = matches!(kind, LayerKind::SelfOnly | LayerKind::Interleaved).then(|| {
            (
                LayerNorm::new(store, &format!("{name}.ln_sa"), d),
                MultiHeadAttention::new(store, &format!("{name}.sa"), cfg, rng),
            )
        });
        let ca = matches!(kind, LayerKind::CrossOnly | LayerKind::Interleaved).then(|| {
            (
                LayerNorm::new(store, &format!("{name}.ln_ca"), d),
                MultiHeadAttention::new(store, &format!("{name}.ca"), cfg, rng),
            )
        });
        let ff = with_ff.then(|| {
            (
                LayerNorm::new(store, &format!("{name}.ln_ff"), d),
                FeedForward::new(store, name, cfg, rng),
            )
        });
        DecoderLayer { kind, sa, ca, ff }
    }

    pub fn forward<'t, F: Real>(
        &self,
        cx: Ctx<'t, '_, F>,
        x: Var<'t, F>,
        self_mask: &Mask,
        memory: Option<Var<'t, F>>,
    ) -> Result<Var<'t, F>> {
        let mut x = x;
        if let Some((ln, att)) = &self.sa {
            let h = ln.forward(cx, x)?;
            x = x.add(att.forward(cx, h, h, self_mask)?.dropout())?;
        }
        if let Some((ln, att)) = &self.ca {
            let mem = memory.ok_or_else(|| {
                Error::Contract("cross-attention layer needs an encoder memory".into())
            })?;
            let h = ln.forward(cx, x)?;
            let m = Mask::none(h.shape()[0], mem.shape()[0]);
            x = x.add(att.forward(cx, h, mem, &m)?.dropout())?;
        }
        if let Some((ln, ff)) = &self.ff {
            let h = ln.forward(cx, x)?;
            x = x.add(ff.forward(cx, h)?.dropout())?;
        }
        Ok(x)
    }
}

/// `PE[p, 2i] = sin(p / 10000^(2i/d))`, `PE[p, 2i+1] = cos(…)`.
pub fn sinusoidal_positions<F: Real>(n: usize, d: usize) -> Tensor<F> {
    sinusoidal_rows(0, n, d)
}

/// Rows `start..start+n` of the sinusoidal table.
pub fn sinusoidal_rows<F: Real>(start: usize, n: usize, d: usize) -> Tensor<F> {
    Tensor::from_fn(&[n, d], |idx| {
        let (p, j) = ((start + idx / d) as f64, idx % d);
        let i2 = (j - j % 2) as f64;
        let angle = p / 10000f64.powf(i2 / d as f64);
        cst(if j % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

/// Token embedding lookup scaled by `√d` plus sinusoidal positions.
pub fn embed_with_positions<'t, F: Real>(
    cx: Ctx<'t, '_, F>,
    table: ParamId,
    ids: &[usize],
) -> Result<Var<'t, F>> {
    embed_from(cx, table, ids, 0)
}

/// As [`embed_with_positions`] with the first token at position `start`.
pub fn embed_from<'t, F: Real>(
    cx: Ctx<'t, '_, F>,
    table: ParamId,
    ids: &[usize],
    start: usize,
) -> Result<Var<'t, F>> {
    let e = cx.p(table).gather(ids)?;
    let d = e.shape()[1];
    let pe = cx.tape.constant(sinusoidal_rows(start, ids.len(), d));
    e.scale(cst((d as f64).sqrt())).add(pe)
}

/// Frame encoder: input projection, positions, self-attention stack, final
/// LayerNorm.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub input: Linear,
    pub layers: Vec<DecoderLayer>,
    pub final_ln: LayerNorm,
    pub d_feat: usize,
}

impl Encoder {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        d_feat: usize,
        cfg: &AttentionConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = (0..cfg.n_layers)
            .map(|l| {
                DecoderLayer::new(store, &format!("{name}.l{l}"), LayerKind::SelfOnly, cfg, true, rng)
            })
            .collect();
        Encoder {
            input: Linear::new(store, &format!("{name}.in"), d_feat, cfg.d_model, rng),
            layers,
            final_ln: LayerNorm::new(store, &format!("{name}.ln_out"), cfg.d_model),
            d_feat,
        }
    }

    /// Encodes `frames: [T×D]` into `[T×d_model]`.
    pub fn forward<'t, F: Real>(
        &self,
        cx: Ctx<'t, '_, F>,
        frames: &Tensor<F>,
        mask: MaskKind,
    ) -> Result<Var<'t, F>> {
        if frames.shape().len() != 2 || frames.cols() != self.d_feat {
            return Err(Error::shape("encoder input", frames.shape(), &[0, self.d_feat]));
        }
        let t = frames.rows();
        let m = Mask::for_kind(mask, t)?;
        let x = cx.tape.constant(frames.clone());
        let h = self.input.forward(cx, x)?;
        let d = h.shape()[1];
        let mut h = h.add(cx.tape.constant(sinusoidal_positions(t, d)))?.dropout();
        for layer in &self.layers {
            h = layer.forward(cx, h, &m, None)?;
        }
        self.final_ln.forward(cx, h)
    }
}
