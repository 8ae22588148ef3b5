//! Connectionist temporal classification: loss, prefix scoring, greedy decode.

use crate::error::{Error, Result};
use crate::tensor::{log_add, CustomOp, Real, Tensor, Var};

/// Merges adjacent repeats, then drops blanks.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev && p != blank {
            out.push(p);
        }
        prev = Some(p);
    }
    out
}

/// Minimum frames needed to emit `y`: one per label plus one blank between
/// each adjacent equal pair.
pub fn min_frames(y: &[usize]) -> usize {
    y.len() + y.windows(2).filter(|w| w[0] == w[1]).count()
}

fn check_inputs<F: Real>(lp: &Tensor<F>, y: &[usize], blank: usize) -> Result<()> {
    if lp.shape().len() != 2 {
        return Err(Error::shape("ctc log_probs", lp.shape(), &[0, 0]));
    }
    let v = lp.cols();
    if let Some(&bad) = y.iter().find(|&&k| k >= v || k == blank) {
        return Err(Error::TokenRange { id: bad, size: v });
    }
    let need = min_frames(y);
    if lp.rows() < need {
        return Err(Error::InfeasibleAlignment {
            frames: lp.rows(),
            required: need,
        });
    }
    Ok(())
}

/// Forward (α) and backward (β) variables over the extended label sequence
/// `[−, y1, −, y2, …, yN, −]`, in log space. Returns `(α, β, log P)`.
fn forward_backward(lp: &[f64], t_len: usize, v: usize, y: &[usize], blank: usize) -> (Vec<f64>, Vec<f64>, f64) {
    let s_len = 2 * y.len() + 1;
    let label = |s: usize| if s % 2 == 0 { blank } else { y[s / 2] };
    let skip_ok = |s: usize| s % 2 == 1 && s >= 3 && y[s / 2] != y[s / 2 - 1];
    let ninf = f64::NEG_INFINITY;
    let mut alpha = vec![ninf; t_len * s_len];
    let mut beta = vec![ninf; t_len * s_len];
    alpha[0] = lp[blank];
    if s_len > 1 {
        alpha[1] = lp[label(1)];
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut a = alpha[(t - 1) * s_len + s];
            if s >= 1 {
                a = log_add(a, alpha[(t - 1) * s_len + s - 1]);
            }
            if skip_ok(s) {
                a = log_add(a, alpha[(t - 1) * s_len + s - 2]);
            }
            alpha[t * s_len + s] = a + lp[t * v + label(s)];
        }
    }
    let last = t_len - 1;
    beta[last * s_len + s_len - 1] = lp[last * v + blank];
    if s_len > 1 {
        beta[last * s_len + s_len - 2] = lp[last * v + label(s_len - 2)];
    }
    for t in (0..last).rev() {
        for s in 0..s_len {
            let mut b = beta[(t + 1) * s_len + s];
            if s + 1 < s_len {
                b = log_add(b, beta[(t + 1) * s_len + s + 1]);
            }
            if s + 2 < s_len && skip_ok(s + 2) {
                b = log_add(b, beta[(t + 1) * s_len + s + 2]);
            }
            beta[t * s_len + s] = b + lp[t * v + label(s)];
        }
    }
    let end = alpha[last * s_len + s_len - 1];
    let log_p = if s_len > 1 {
        log_add(end, alpha[last * s_len + s_len - 2])
    } else {
        end
    };
    (alpha, beta, log_p)
}

/// `−ln p(y|x)` for plain log-probabilities `[T×V]`.
pub fn ctc_loss_value<F: Real>(log_probs: &Tensor<F>, y: &[usize], blank: usize) -> Result<f64> {
    check_inputs(log_probs, y, blank)?;
    let lp: Vec<f64> = log_probs.data().iter().map(|x| x.to_f64c()).collect();
    let (_, _, log_p) = forward_backward(&lp, log_probs.rows(), log_probs.cols(), y, blank);
    Ok(-log_p)
}

struct CtcGrad<F> {
    grad: Vec<F>,
}

impl<F: Real> CustomOp<F> for CtcGrad<F> {
    fn name(&self) -> &'static str {
        "ctc_loss"
    }

    fn backward(&self, _inputs: &[&Tensor<F>], _out: &Tensor<F>, g: &[F]) -> Vec<Option<Vec<F>>> {
        vec![Some(self.grad.iter().map(|&x| x * g[0]).collect())]
    }
}

/// Differentiable CTC loss over log-probabilities `[T×V]` (rows already
/// log-softmaxed). The gradient with respect to `log_probs[t,k]` is minus the
/// posterior occupancy of label `k` at frame `t`.
pub fn ctc_loss<'t, F: Real>(log_probs: Var<'t, F>, y: &[usize], blank: usize) -> Result<Var<'t, F>> {
    let x = log_probs.value();
    check_inputs(&x, y, blank)?;
    let (t_len, v) = (x.rows(), x.cols());
    let lp: Vec<f64> = x.data().iter().map(|a| a.to_f64c()).collect();
    let (alpha, beta, log_p) = forward_backward(&lp, t_len, v, y, blank);
    if !log_p.is_finite() {
        return Err(Error::Numeric("CTC path probability underflowed".into()));
    }
    let s_len = 2 * y.len() + 1;
    let mut occ = vec![f64::NEG_INFINITY; t_len * v];
    for t in 0..t_len {
        for s in 0..s_len {
            let k = if s % 2 == 0 { blank } else { y[s / 2] };
            // α and β both include the emission at t.
            let c = alpha[t * s_len + s] + beta[t * s_len + s] - lp[t * v + k];
            occ[t * v + k] = log_add(occ[t * v + k], c);
        }
    }
    let grad = occ.iter().map(|&o| F::from_f64c(-(o - log_p).exp())).collect();
    let out = Tensor::scalar(F::from_f64c(-log_p));
    Ok(log_probs.tape().custom(&[log_probs], out, Box::new(CtcGrad { grad })))
}

/// `collapse(argmax per frame)`.
pub fn ctc_greedy_decode<F: Real>(log_probs: &Tensor<F>, blank: usize) -> Vec<usize> {
    collapse(&log_probs.argmax_rows(), blank)
}

/// Prefix-scoring state for one hypothesis: per-frame log-probabilities that
/// the first `t+1` frames collapse to exactly the prefix, split by whether the
/// last frame is blank (`r_b`) or the prefix's final label (`r_nb`).
#[derive(Clone, Debug, PartialEq)]
pub struct CtcPrefixState {
    r_b: Vec<f64>,
    r_nb: Vec<f64>,
    last: Option<usize>,
    /// `log P(output starts with the prefix)`.
    pub score: f64,
}

/// Incremental CTC prefix scorer over a fixed posterior.
#[derive(Clone, Debug)]
pub struct CtcPrefixScorer {
    lp: Vec<f64>,
    t_len: usize,
    v: usize,
    blank: usize,
}

impl CtcPrefixScorer {
    pub fn new<F: Real>(log_probs: &Tensor<F>, blank: usize) -> Result<Self> {
        if log_probs.shape().len() != 2 || log_probs.rows() == 0 {
            return Err(Error::Contract("empty CTC posterior".into()));
        }
        Ok(CtcPrefixScorer {
            lp: log_probs.data().iter().map(|x| x.to_f64c()).collect(),
            t_len: log_probs.rows(),
            v: log_probs.cols(),
            blank,
        })
    }

    /// Restricts scoring to the first `frames` frames.
    pub fn truncated(&self, frames: usize) -> Self {
        let frames = frames.min(self.t_len);
        CtcPrefixScorer {
            lp: self.lp[..frames * self.v].to_vec(),
            t_len: frames,
            v: self.v,
            blank: self.blank,
        }
    }

    pub fn frames(&self) -> usize {
        self.t_len
    }

    /// State of the empty prefix.
    pub fn initial(&self) -> CtcPrefixState {
        let mut r_b = Vec::with_capacity(self.t_len);
        let mut acc = 0.0;
        for t in 0..self.t_len {
            acc += self.lp[t * self.v + self.blank];
            r_b.push(acc);
        }
        CtcPrefixState {
            r_b,
            r_nb: vec![f64::NEG_INFINITY; self.t_len],
            last: None,
            score: 0.0,
        }
    }

    /// State of `prefix · c` for a non-blank label `c`.
    pub fn extend(&self, st: &CtcPrefixState, c: usize) -> CtcPrefixState {
        debug_assert!(c != self.blank && c < self.v);
        let ninf = f64::NEG_INFINITY;
        let (t_len, v) = (self.t_len, self.v);
        let phi = |t: usize| {
            if st.last == Some(c) {
                st.r_b[t]
            } else {
                log_add(st.r_b[t], st.r_nb[t])
            }
        };
        let mut r_nb = vec![ninf; t_len];
        let mut r_b = vec![ninf; t_len];
        let start = if st.last.is_none() { self.lp[c] } else { ninf };
        r_nb[0] = start;
        let mut psi = start;
        for t in 1..t_len {
            let p_c = self.lp[t * v + c];
            let ph = phi(t - 1);
            r_nb[t] = log_add(r_nb[t - 1], ph) + p_c;
            r_b[t] = log_add(r_b[t - 1], r_nb[t - 1]) + self.lp[t * v + self.blank];
            psi = log_add(psi, ph + p_c);
        }
        CtcPrefixState {
            r_b,
            r_nb,
            last: Some(c),
            score: psi,
        }
    }

    /// `log P(output equals the prefix exactly)`, the end-of-sequence score.
    pub fn eos_score(&self, st: &CtcPrefixState) -> f64 {
        log_add(st.r_b[self.t_len - 1], st.r_nb[self.t_len - 1])
    }

    /// Scores of all single-label extensions at once (blank gets `−∞`).
    pub fn extend_all(&self, st: &CtcPrefixState) -> Vec<f64> {
        (0..self.v)
            .map(|c| if c == self.blank { f64::NEG_INFINITY } else { self.extend(st, c).score })
            .collect()
    }
}

/// `log P(collapse(q_{1:j}) starts with g)`; `−∞` when infeasible.
pub fn ctc_prefix_score<F: Real>(log_probs: &Tensor<F>, g: &[usize], j: usize, blank: usize) -> Result<f64> {
    let sc = CtcPrefixScorer::new(log_probs, blank)?.truncated(j.max(1));
    if j == 0 {
        return Ok(if g.is_empty() { 0.0 } else { f64::NEG_INFINITY });
    }
    let mut st = sc.initial();
    for &c in g {
        if c == blank || c >= sc.v {
            return Err(Error::TokenRange { id: c, size: sc.v });
        }
        st = sc.extend(&st, c);
    }
    Ok(st.score)
}

/// Log-probability that the output is exactly `y` (finite or `−∞`).
pub fn ctc_sequence_logprob<F: Real>(log_probs: &Tensor<F>, y: &[usize], blank: usize) -> f64 {
    match ctc_loss_value(log_probs, y, blank) {
        Ok(l) => -l,
        Err(_) => f64::NEG_INFINITY,
    }
}
