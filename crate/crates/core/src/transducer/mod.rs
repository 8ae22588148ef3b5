//! Neural transducer: lattice loss, joint network, prediction networks and the
//! decoupled blank/non-blank logit combination.

mod lattice;
mod model;

pub use lattice::{transducer_loss, transducer_loss_value};
pub use model::{
    PredKind, Prediction, TransducerConfig, TransducerLossParts, TransducerModel, TransducerSession,
    TransducerVariant,
};

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Ctx, Linear};
use crate::tensor::{cst, CustomOp, ParamStore, Real, Tensor, Var};

/// `out[blank] = f·ac[blank]`, `out[k] = ac[k] + lm[k]` otherwise, with
/// `f = 2` when `double_blank` and 1 otherwise.
pub fn combine_nt_logits<F: Real>(ac: &[F], lm: &[F], blank: usize, double_blank: bool) -> Result<Vec<F>> {
    if ac.len() != lm.len() {
        return Err(Error::shape("combine_nt_logits", &[ac.len()], &[lm.len()]));
    }
    let f: F = cst(if double_blank { 2.0 } else { 1.0 });
    Ok(ac
        .iter()
        .zip(lm)
        .enumerate()
        .map(|(k, (&a, &l))| if k == blank { f * a } else { a + l })
        .collect())
}

struct CombineNt<F> {
    blank: usize,
    factor: F,
    u_len: usize,
}

impl<F: Real> CustomOp<F> for CombineNt<F> {
    fn name(&self) -> &'static str {
        "combine_nt_logits"
    }

    fn backward(&self, inputs: &[&Tensor<F>], _out: &Tensor<F>, g: &[F]) -> Vec<Option<Vec<F>>> {
        let v = inputs[0].cols();
        let mut g_ac = g.to_vec();
        let mut g_lm = vec![F::zero(); inputs[1].numel()];
        for (r, row) in g_ac.chunks_mut(v).enumerate() {
            let lm_row = &mut g_lm[(r % self.u_len) * v..(r % self.u_len + 1) * v];
            for k in 0..v {
                if k == self.blank {
                    row[k] *= self.factor;
                } else {
                    lm_row[k] += row[k];
                }
            }
        }
        vec![Some(g_ac), Some(g_lm)]
    }
}

/// Lattice form of [`combine_nt_logits`]: `ac: [T·(N+1) × V]`, `lm: [(N+1) × V]`
/// broadcast over frames.
pub fn combine_nt_lattice<'t, F: Real>(
    ac: Var<'t, F>,
    lm: Var<'t, F>,
    blank: usize,
    double_blank: bool,
) -> Result<Var<'t, F>> {
    let a = ac.value();
    let l = lm.value();
    let u_len = l.rows();
    if a.cols() != l.cols() || a.rows() % u_len != 0 {
        return Err(Error::shape("combine_nt_lattice", a.shape(), l.shape()));
    }
    let v = a.cols();
    let factor: F = cst(if double_blank { 2.0 } else { 1.0 });
    let mut out = a.data().to_vec();
    for (r, row) in out.chunks_mut(v).enumerate() {
        let lm_row = l.row(r % u_len);
        for k in 0..v {
            if k == blank {
                row[k] *= factor;
            } else {
                row[k] += lm_row[k];
            }
        }
    }
    let op = CombineNt { blank, factor, u_len };
    Ok(ac
        .tape()
        .custom(&[ac, lm], Tensor::from_parts(a.shape().to_vec(), out), Box::new(op)))
}

/// `out(tanh(enc(h_enc) + pre(h_pre)))`.
#[derive(Clone, Debug)]
pub struct Joint {
    pub enc: Linear,
    pub pre: Linear,
    pub out: Linear,
}

impl Joint {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        d_model: usize,
        d_joint: usize,
        vocab: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Joint {
            enc: Linear::new(store, &format!("{name}.enc"), d_model, d_joint, rng),
            pre: Linear::without_bias(store, &format!("{name}.pre"), d_model, d_joint, rng),
            out: Linear::new(store, &format!("{name}.out"), d_joint, vocab, rng),
        }
    }

    /// All lattice logits: `h_enc: [T×d]`, `h_pre: [(N+1)×d]` →
    /// `[T·(N+1) × V]`.
    pub fn lattice<'t, F: Real>(&self, cx: Ctx<'t, '_, F>, h_enc: Var<'t, F>, h_pre: Var<'t, F>) -> Result<Var<'t, F>> {
        let e = self.enc.forward(cx, h_enc)?;
        let p = self.pre.forward(cx, h_pre)?;
        self.out.forward(cx, e.outer_add(p)?.tanh())
    }

    /// Single-node logits from already projected encoder and prediction rows.
    pub fn node<F: Real>(&self, params: &ParamStore<F>, enc_proj: &[F], pre_proj: &[F]) -> Vec<F> {
        let w = params.value(self.out.w);
        let dj = enc_proj.len();
        let v = w.cols();
        let mut out: Vec<F> = match self.out.b {
            Some(b) => params.value(b).data().to_vec(),
            None => vec![F::zero(); v],
        };
        for j in 0..dj {
            let h = (enc_proj[j] + pre_proj[j]).tanh();
            if h != F::zero() {
                for (o, &wv) in out.iter_mut().zip(w.row(j)) {
                    *o += h * wv;
                }
            }
        }
        out
    }
}
