use crate::error::{Error, Result};
use crate::tensor::{log_add, CustomOp, Real, Tensor, Var};

/// Lattice log-probabilities laid out as rows `t·(N+1) + u`.
fn check(lp: &Tensor<impl Real>, t_len: usize, y: &[usize], blank: usize) -> Result<()> {
    if t_len == 0 {
        return Err(Error::Contract("transducer lattice needs T ≥ 1".into()));
    }
    let rows = t_len * (y.len() + 1);
    if lp.shape().len() != 2 || lp.rows() != rows {
        return Err(Error::shape("transducer lattice", lp.shape(), &[rows, lp.cols()]));
    }
    let v = lp.cols();
    if let Some(&bad) = y.iter().find(|&&k| k >= v || k == blank) {
        return Err(Error::TokenRange { id: bad, size: v });
    }
    Ok(())
}

/// α, β over the `T×(N+1)` lattice and `log P(y|x)`.
///
/// `α(t,u)`: log-probability of reaching node `(t,u)`;
/// `β(t,u)`: log-probability of finishing from `(t,u)`, the final blank at
/// `(T−1,N)` included.
pub(crate) fn lattice_forward_backward(
    lp: &[f64],
    t_len: usize,
    v: usize,
    y: &[usize],
    blank: usize,
) -> (Vec<f64>, Vec<f64>, f64) {
    let u_len = y.len() + 1;
    let at = |t: usize, u: usize| (t * u_len + u) * v;
    let ninf = f64::NEG_INFINITY;
    let mut alpha = vec![ninf; t_len * u_len];
    let mut beta = vec![ninf; t_len * u_len];
    alpha[0] = 0.0;
    for t in 0..t_len {
        for u in 0..u_len {
            if t == 0 && u == 0 {
                continue;
            }
            let mut a = ninf;
            if t > 0 {
                a = alpha[(t - 1) * u_len + u] + lp[at(t - 1, u) + blank];
            }
            if u > 0 {
                a = log_add(a, alpha[t * u_len + u - 1] + lp[at(t, u - 1) + y[u - 1]]);
            }
            alpha[t * u_len + u] = a;
        }
    }
    for t in (0..t_len).rev() {
        for u in (0..u_len).rev() {
            let blank_next = if t + 1 < t_len {
                beta[(t + 1) * u_len + u]
            } else if u == u_len - 1 {
                0.0
            } else {
                ninf
            };
            let mut b = lp[at(t, u) + blank] + blank_next;
            if u + 1 < u_len {
                b = log_add(b, lp[at(t, u) + y[u]] + beta[t * u_len + u + 1]);
            }
            beta[t * u_len + u] = b;
        }
    }
    let log_p = beta[0];
    (alpha, beta, log_p)
}

/// `−ln p(y|x)` for plain lattice log-probabilities.
pub fn transducer_loss_value<F: Real>(log_probs: &Tensor<F>, t_len: usize, y: &[usize], blank: usize) -> Result<f64> {
    check(log_probs, t_len, y, blank)?;
    let lp: Vec<f64> = log_probs.data().iter().map(|x| x.to_f64c()).collect();
    Ok(-lattice_forward_backward(&lp, t_len, log_probs.cols(), y, blank).2)
}

struct LatticeGrad<F> {
    grad: Vec<F>,
}

impl<F: Real> CustomOp<F> for LatticeGrad<F> {
    fn name(&self) -> &'static str {
        "transducer_loss"
    }

    fn backward(&self, _inputs: &[&Tensor<F>], _out: &Tensor<F>, g: &[F]) -> Vec<Option<Vec<F>>> {
        vec![Some(self.grad.iter().map(|&x| x * g[0]).collect())]
    }
}

/// Differentiable transducer loss. `log_probs: [T·(N+1) × V]`, rows already
/// log-softmaxed, row `t·(N+1)+u` holding the distribution at frame `t` after
/// `u` emitted labels.
pub fn transducer_loss<'t, F: Real>(
    log_probs: Var<'t, F>,
    t_len: usize,
    y: &[usize],
    blank: usize,
) -> Result<Var<'t, F>> {
    let x = log_probs.value();
    check(&x, t_len, y, blank)?;
    let v = x.cols();
    let u_len = y.len() + 1;
    let lp: Vec<f64> = x.data().iter().map(|a| a.to_f64c()).collect();
    let (alpha, beta, log_p) = lattice_forward_backward(&lp, t_len, v, y, blank);
    if !log_p.is_finite() {
        return Err(Error::Numeric("transducer path probability underflowed".into()));
    }
    let mut grad = vec![F::zero(); lp.len()];
    for t in 0..t_len {
        for u in 0..u_len {
            let node = t * u_len + u;
            let base = node * v;
            let a = alpha[node];
            let blank_next = if t + 1 < t_len {
                beta[(t + 1) * u_len + u]
            } else if u == u_len - 1 {
                0.0
            } else {
                f64::NEG_INFINITY
            };
            let occ = a + lp[base + blank] + blank_next - log_p;
            grad[base + blank] = F::from_f64c(-occ.exp());
            if u + 1 < u_len {
                let occ = a + lp[base + y[u]] + beta[node + 1] - log_p;
                grad[base + y[u]] = F::from_f64c(-occ.exp());
            }
        }
    }
    let out = Tensor::scalar(F::from_f64c(-log_p));
    Ok(log_probs.tape().custom(&[log_probs], out, Box::new(LatticeGrad { grad })))
}
