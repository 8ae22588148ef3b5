use rand::Rng;

use super::{AttentionConfig, Ctx, Linear, Mask};
use crate::error::{Error, Result};
use crate::tensor::{cst, ParamStore, Real, Var};

/// `softmax(Q·Kᵀ/√d_k)·V` with disallowed positions filled before the softmax.
pub fn scaled_dot_attention<'t, F: Real>(
    q: Var<'t, F>,
    k: Var<'t, F>,
    v: Var<'t, F>,
    mask: &Mask,
) -> Result<Var<'t, F>> {
    let (qs, ks, vs) = (q.shape(), k.shape(), v.shape());
    if qs.len() != 2 || ks.len() != 2 || vs.len() != 2 || qs[1] != ks[1] || ks[0] != vs[0] {
        return Err(Error::shape("attention", &qs, &ks));
    }
    if mask.n_q != qs[0] || mask.n_k != ks[0] {
        return Err(Error::shape("attention mask", &[mask.n_q, mask.n_k], &[qs[0], ks[0]]));
    }
    mask.check_rows()?;
    let scale: F = cst(1.0 / (qs[1] as f64).sqrt());
    let mut scores = q.matmul_t(k)?.scale(scale);
    if !mask.is_full() {
        scores = scores.masked_fill(mask.keep())?;
    }
    scores.softmax().matmul(v)
}

/// Multi-head attention with separate query/key/value/output projections.
///
/// The key projection has no bias: a key bias shifts every score in a row
/// equally and so never changes the output.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        cfg: &AttentionConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let d = cfg.d_model;
        MultiHeadAttention {
            q: Linear::new(store, &format!("{name}.q"), d, d, rng),
            k: Linear::without_bias(store, &format!("{name}.k"), d, d, rng),
            v: Linear::new(store, &format!("{name}.v"), d, d, rng),
            o: Linear::new(store, &format!("{name}.o"), d, d, rng),
            heads: cfg.heads,
        }
    }

    pub fn forward<'t, F: Real>(
        &self,
        cx: Ctx<'t, '_, F>,
        x_q: Var<'t, F>,
        x_kv: Var<'t, F>,
        mask: &Mask,
    ) -> Result<Var<'t, F>> {
        let q = self.q.forward(cx, x_q)?;
        let k = self.k.forward(cx, x_kv)?;
        let v = self.v.forward(cx, x_kv)?;
        let d = q.shape()[1];
        let dk = d / self.heads;
        let out = if self.heads == 1 {
            scaled_dot_attention(q, k, v, mask)?
        } else {
            let mut heads = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let qh = q.slice_cols(h * dk, dk)?;
                let kh = k.slice_cols(h * dk, dk)?;
                let vh = v.slice_cols(h * dk, dk)?;
                heads.push(scaled_dot_attention(qh, kh, vh, mask)?);
            }
            Var::concat_cols(&heads)?
        };
        self.o.forward(cx, out)
    }
}
