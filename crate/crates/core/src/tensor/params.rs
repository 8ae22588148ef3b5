use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{cst, Grads, Real, Tensor};
use crate::error::{Error, Result};

static NEXT_TAG: AtomicU64 = AtomicU64::new(1);

/// Index of a parameter within the store that created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId {
    store: u64,
    index: usize,
}

impl ParamId {
    pub fn index(&self) -> usize {
        self.index
    }
}

#[derive(Clone, Debug)]
pub struct Param<F> {
    pub name: String,
    pub value: Arc<Tensor<F>>,
    pub grad: Vec<F>,
    pub frozen: bool,
}

/// Named parameters of one model, in registration order.
#[derive(Clone, Debug)]
pub struct ParamStore<F> {
    tag: u64,
    params: Vec<Param<F>>,
}

impl<F: Real> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            tag: NEXT_TAG.fetch_add(1, Ordering::Relaxed),
            params: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        let n = value.numel();
        self.params.push(Param {
            name,
            value: Arc::new(value),
            grad: vec![F::zero(); n],
            frozen: false,
        });
        ParamId {
            store: self.tag,
            index: self.params.len() - 1,
        }
    }

    /// Gaussian initialisation with standard deviation `std`.
    pub fn add_normal(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        std: f64,
        rng: &mut impl Rng,
    ) -> ParamId {
        let dist = Normal::new(0.0, std).expect("valid std");
        let t = Tensor::from_fn(shape, |_| cst(dist.sample(rng)));
        self.add(name, t)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn add_ones(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::from_fn(shape, |_| F::one()))
    }

    pub fn owns(&self, id: ParamId) -> bool {
        id.store == self.tag && id.index < self.params.len()
    }

    pub fn get(&self, id: ParamId) -> &Param<F> {
        assert!(self.owns(id), "parameter id from a different store");
        &self.params[id.index]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<F> {
        assert!(self.owns(id), "parameter id from a different store");
        &mut self.params[id.index]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.get(id).value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(|index| ParamId {
            store: self.tag,
            index,
        })
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(|index| ParamId {
            store: self.tag,
            index,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<F>> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Number of scalar parameters, optionally only trainable ones.
    pub fn count(&self, trainable_only: bool) -> usize {
        self.params
            .iter()
            .filter(|p| !trainable_only || !p.frozen)
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.params.iter_mut().for_each(|p| p.frozen = frozen);
    }

    /// Same parameters in another precision. Ids stay valid.
    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            tag: self.tag,
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: Arc::new(p.value.cast()),
                    grad: vec![G::zero(); p.grad.len()],
                    frozen: p.frozen,
                })
                .collect(),
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = F::zero());
        }
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &[F]) {
        let p = self.get_mut(id);
        p.grad.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
    }

    /// Replaces a parameter's value, checking the shape.
    pub fn set_value(&mut self, id: ParamId, value: Tensor<F>) -> Result<()> {
        let p = self.get_mut(id);
        if p.value.shape() != value.shape() {
            return Err(Error::shape("set_value", p.value.shape(), value.shape()));
        }
        p.value = Arc::new(value);
        Ok(())
    }

    /// Copies values from another store by name; every name must exist here
    /// with the same shape.
    pub fn copy_from(&mut self, other: &ParamStore<F>, prefix_map: impl Fn(&str) -> Option<String>) -> Result<usize> {
        let mut copied = 0;
        for p in &other.params {
            let Some(name) = prefix_map(&p.name) else { continue };
            let id = self
                .find(&name)
                .ok_or_else(|| Error::Contract(format!("no parameter named {name}")))?;
            self.set_value(id, p.value.as_ref().clone())?;
            copied += 1;
        }
        Ok(copied)
    }

    /// Bitwise equality of all parameter values.
    pub fn values_equal(&self, other: &ParamStore<F>) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.name == b.name && a.value.data() == b.value.data())
    }
}

/// Dense gradient accumulator aligned with a store's parameter order.
#[derive(Clone, Debug)]
pub struct GradBuffer<F> {
    tag: u64,
    grads: Vec<Vec<F>>,
}

impl<F: Real> GradBuffer<F> {
    pub fn for_store(store: &ParamStore<F>) -> Self {
        GradBuffer {
            tag: store.tag,
            grads: store.params.iter().map(|p| vec![F::zero(); p.value.numel()]).collect(),
        }
    }

    pub fn add_grads(&mut self, grads: &Grads<F>) {
        for (id, g) in grads.params() {
            if id.store == self.tag {
                self.grads[id.index]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(a, &b)| *a += b);
            }
        }
    }

    pub fn add(&mut self, other: &GradBuffer<F>) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.iter_mut().zip(b).for_each(|(x, &y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: F) {
        self.grads.iter_mut().flatten().for_each(|g| *g *= s);
    }

    pub fn get(&self, id: ParamId) -> &[F] {
        &self.grads[id.index]
    }

    pub fn write_into(&self, store: &mut ParamStore<F>) {
        for (p, g) in store.params.iter_mut().zip(&self.grads) {
            p.grad.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Linear warmup steps before reaching `lr`.
    pub warmup: usize,
    /// Global gradient-norm clip.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            warmup: 100,
            clip_norm: Some(5.0),
        }
    }
}

/// Adam with optional warmup and global-norm clipping. Frozen parameters are
/// never touched.
#[derive(Clone, Debug)]
pub struct Adam<F> {
    cfg: AdamConfig,
    step: usize,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(cfg: AdamConfig, store: &ParamStore<F>) -> Self {
        Adam {
            cfg,
            step: 0,
            m: store.params.iter().map(|p| vec![F::zero(); p.value.numel()]).collect(),
            v: store.params.iter().map(|p| vec![F::zero(); p.value.numel()]).collect(),
        }
    }

    pub fn steps(&self) -> usize {
        self.step
    }

    /// Applies one update from the store's grad fields, then zeroes them.
    pub fn step(&mut self, store: &mut ParamStore<F>) {
        self.step += 1;
        let t = self.step as f64;
        let warm = if self.cfg.warmup > 0 {
            (t / self.cfg.warmup as f64).min(1.0)
        } else {
            1.0
        };
        let mut scale = 1.0;
        if let Some(max_norm) = self.cfg.clip_norm {
            let norm = store
                .params
                .iter()
                .filter(|p| !p.frozen)
                .flat_map(|p| p.grad.iter())
                .map(|g| {
                    let g = g.to_f64c();
                    g * g
                })
                .sum::<f64>()
                .sqrt();
            if norm > max_norm {
                scale = max_norm / norm;
            }
        }
        let lr = self.cfg.lr * warm;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powf(t);
        let bc2 = 1.0 - b2.powf(t);
        let step_size: F = cst(lr / bc1);
        let (b1f, b2f): (F, F) = (cst(b1), cst(b2));
        let (one_b1, one_b2): (F, F) = (cst(1.0 - b1), cst(1.0 - b2));
        let scale_f: F = cst(scale);
        let bc2_sqrt: F = cst(bc2.sqrt());
        let eps: F = cst(self.cfg.eps);
        for (i, p) in store.params.iter_mut().enumerate() {
            if p.frozen {
                p.grad.iter_mut().for_each(|g| *g = F::zero());
                continue;
            }
            let value = Arc::make_mut(&mut p.value);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in value.data_mut().iter_mut().enumerate() {
                let g = p.grad[j] * scale_f;
                m[j] = b1f * m[j] + one_b1 * g;
                v[j] = b2f * v[j] + one_b2 * g * g;
                *w -= step_size * m[j] / (v[j].sqrt() / bc2_sqrt + eps);
            }
            p.grad.iter_mut().for_each(|g| *g = F::zero());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    #[test]
    fn repeated_backward_accumulates_exactly_twice() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Tensor::new(vec![3], vec![0.3, -1.2, 2.0]).unwrap());
        let tape = Tape::new();
        let wv = tape.param(&store, w);
        let loss = wv.mul(wv).unwrap().sum();
        let g1 = tape.backward(loss).unwrap();
        g1.accumulate_into(&mut store);
        let once = store.get(w).grad.clone();
        let g2 = tape.backward(loss).unwrap();
        g2.accumulate_into(&mut store);
        let twice = store.get(w).grad.clone();
        for (a, b) in once.iter().zip(&twice) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn frozen_params_get_no_gradient_and_no_update() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        store.set_frozen(true);
        let before = store.clone();
        let tape = Tape::new();
        let wv = tape.param(&store, w);
        assert!(!wv.requires_grad());
        let loss = wv.mul(wv).unwrap().sum();
        tape.backward(loss).unwrap().accumulate_into(&mut store);
        assert!(store.get(w).grad.iter().all(|&g| g == 0.0));
        let mut adam = Adam::new(AdamConfig::default(), &store);
        adam.step(&mut store);
        assert!(store.values_equal(&before));
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Tensor::new(vec![2], vec![3.0, -2.0]).unwrap());
        let mut adam = Adam::new(
            AdamConfig {
                lr: 0.1,
                warmup: 0,
                ..AdamConfig::default()
            },
            &store,
        );
        for _ in 0..300 {
            let tape = Tape::new();
            let wv = tape.param(&store, w);
            let loss = wv.mul(wv).unwrap().sum();
            tape.backward(loss).unwrap().accumulate_into(&mut store);
            adam.step(&mut store);
        }
        assert!(store.value(w).data().iter().all(|x| x.abs() < 1e-2));
    }

    #[test]
    fn foreign_param_grads_are_ignored() {
        let mut a = ParamStore::<f64>::new();
        let mut b = ParamStore::<f64>::new();
        let wa = a.add("w", Tensor::scalar(2.0));
        let wb = b.add("w", Tensor::scalar(3.0));
        let tape = Tape::new();
        let loss = tape.param(&a, wa).mul(tape.param(&b, wb)).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        let mut buf = GradBuffer::for_store(&a);
        buf.add_grads(&g);
        assert_eq!(buf.get(wa), &[3.0]);
        g.accumulate_into(&mut b);
        assert_eq!(b.get(wb).grad, vec![2.0]);
    }
}
