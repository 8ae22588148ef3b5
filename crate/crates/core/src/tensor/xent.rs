use super::ops::log_softmax_in_place;
use super::{cst, CustomOp, Real, Tensor, Var};
use crate::error::{Error, Result};

struct SmoothedXent<F> {
    targets: Vec<usize>,
    smoothing: F,
    log_probs: Vec<F>,
}

impl<F: Real> CustomOp<F> for SmoothedXent<F> {
    fn name(&self) -> &'static str {
        "cross_entropy"
    }

    fn backward(&self, inputs: &[&Tensor<F>], _out: &Tensor<F>, g: &[F]) -> Vec<Option<Vec<F>>> {
        let v = inputs[0].cols();
        let off = self.smoothing / cst(v as f64);
        let on = F::one() - self.smoothing;
        let mut grad: Vec<F> = self.log_probs.iter().map(|&lp| lp.exp()).collect();
        for (row, &y) in grad.chunks_mut(v).zip(&self.targets) {
            row.iter_mut().for_each(|x| *x = (*x - off) * g[0]);
            row[y] -= on * g[0];
        }
        vec![Some(grad)]
    }
}

/// Summed cross-entropy of `logits: [n×V]` against one target per row, with
/// label smoothing `ε`: `−(1−ε)·log p(y) − ε/V·Σ_k log p(k)`.
pub fn cross_entropy<'t, F: Real>(
    logits: Var<'t, F>,
    targets: &[usize],
    smoothing: f64,
) -> Result<Var<'t, F>> {
    let x = logits.value();
    if x.shape().len() != 2 || x.rows() != targets.len() {
        return Err(Error::shape("cross_entropy", x.shape(), &[targets.len()]));
    }
    if !x.is_finite() {
        return Err(Error::Numeric("cross_entropy of non-finite logits".into()));
    }
    let v = x.cols();
    if let Some(&bad) = targets.iter().find(|&&y| y >= v) {
        return Err(Error::TokenRange { id: bad, size: v });
    }
    let eps: F = cst(smoothing);
    let mut lp = x.data().to_vec();
    let mut total = F::zero();
    for (row, &y) in lp.chunks_mut(v).zip(targets) {
        log_softmax_in_place(row);
        let mean: F = row.iter().copied().sum::<F>() / cst(v as f64);
        total -= (F::one() - eps) * row[y] + eps * mean;
    }
    let op = SmoothedXent {
        targets: targets.to_vec(),
        smoothing: eps,
        log_probs: lp,
    };
    Ok(logits.tape().custom(&[logits], Tensor::scalar(total), Box::new(op)))
}
