use std::sync::Arc;

use super::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Per-parameter maximum relative error between analytic and central
/// finite-difference gradients.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub per_param: Vec<(String, f64)>,
    /// Largest analytic gradient magnitude seen on frozen parameters.
    pub frozen_max_abs_grad: f64,
    pub checked: usize,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.per_param.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&(String, f64)> {
        self.per_param
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

fn eval<Fun>(f: &Fun, store: &ParamStore<f64>) -> Result<f64>
where
    Fun: for<'t> Fn(&'t Tape<f64>, &'t ParamStore<f64>) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let v = f(&tape, store)?.value().item();
    if !v.is_finite() {
        return Err(Error::Numeric(format!("objective is not finite: {v}")));
    }
    Ok(v)
}

/// Compares analytic gradients of `f` against central differences
/// `(f(θ+h) − f(θ−h)) / 2h`, using relative error
/// `|a − n| / max(|a|, |n|, 1e-8)`.
///
/// At most `max_per_param` evenly strided entries of each trainable parameter
/// are probed (all entries when `None`).
pub fn grad_check<Fun>(
    store: &mut ParamStore<f64>,
    step: f64,
    max_per_param: Option<usize>,
    f: Fun,
) -> Result<GradReport>
where
    Fun: for<'t> Fn(&'t Tape<f64>, &'t ParamStore<f64>) -> Result<Var<'t, f64>>,
{
    store.zero_grad();
    {
        let tape = Tape::new();
        let loss = f(&tape, store)?;
        if !loss.value().item().is_finite() {
            return Err(Error::Numeric("objective is not finite".into()));
        }
        let grads = tape.backward(loss)?;
        grads.accumulate_into(store);
    }
    let ids: Vec<_> = store.ids().collect();
    let mut per_param = Vec::new();
    let mut frozen_max = 0.0f64;
    let mut checked = 0;
    for id in ids {
        let p = store.get(id).clone();
        if p.frozen {
            frozen_max = p.grad.iter().fold(frozen_max, |m, g| m.max(g.abs()));
            continue;
        }
        let n = p.value.numel();
        let stride = match max_per_param {
            Some(k) if k < n => n.div_ceil(k),
            _ => 1,
        };
        let mut worst = 0.0f64;
        for j in (0..n).step_by(stride) {
            let orig = p.value.data()[j];
            let mut plus = p.value.as_ref().clone();
            plus.data_mut()[j] = orig + step;
            store.get_mut(id).value = Arc::new(plus);
            let fp = eval(&f, store)?;
            let mut minus = p.value.as_ref().clone();
            minus.data_mut()[j] = orig - step;
            store.get_mut(id).value = Arc::new(minus);
            let fm = eval(&f, store)?;
            store.get_mut(id).value = Arc::clone(&p.value);
            let numeric = (fp - fm) / (2.0 * step);
            let analytic = p.grad[j];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
            checked += 1;
        }
        per_param.push((p.name.clone(), worst));
    }
    store.zero_grad();
    Ok(GradReport {
        per_param,
        frozen_max_abs_grad: frozen_max,
        checked,
    })
}
