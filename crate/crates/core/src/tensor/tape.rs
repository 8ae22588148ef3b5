use std::cell::{Ref, RefCell};
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ops::{log_softmax_in_place, logsumexp_slice, softmax_in_place};
use super::params::{ParamId, ParamStore};
use super::{cst, Real, Tensor};
use crate::error::{Error, Result};

/// Backward rule for an operation implemented outside the tape.
///
/// Returns one gradient per input (in input order); `None` means the input
/// receives no gradient.
pub trait CustomOp<F: Real> {
    fn name(&self) -> &'static str;
    fn backward(
        &self,
        inputs: &[&Tensor<F>],
        output: &Tensor<F>,
        grad_out: &[F],
    ) -> Vec<Option<Vec<F>>>;
}

enum Op<F: Real> {
    Leaf,
    Param(ParamId),
    MatMul { a: usize, b: usize, b_t: bool },
    Add(usize, usize),
    AddRow(usize, usize),
    OuterAdd(usize, usize),
    Mul(usize, usize),
    Scale(usize, F),
    Reshape(usize),
    Transpose(usize),
    Gather(usize, Vec<usize>),
    LogSoftmax(usize),
    Softmax(usize),
    LogSumExp(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<F>,
        rstd: Vec<F>,
    },
    Gelu(usize),
    Relu(usize),
    Tanh(usize),
    Dropout(usize, Vec<F>),
    MaskedFill(usize, Arc<Vec<bool>>),
    SliceCols(usize, usize),
    ConcatCols(Vec<usize>),
    Sum(usize),
    Custom(Vec<usize>, Box<dyn CustomOp<F>>),
}

struct Node<F: Real> {
    value: Arc<Tensor<F>>,
    op: Op<F>,
    needs_grad: bool,
}

/// Records operations in execution order; `backward` replays them in reverse.
///
/// A tape is confined to one thread. Dropout is active only on tapes built
/// with [`Tape::training`].
pub struct Tape<F: Real> {
    nodes: RefCell<Vec<Node<F>>>,
    rng: Option<RefCell<ChaCha8Rng>>,
    dropout_p: F,
}

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t, F: Real> {
    tape: &'t Tape<F>,
    id: usize,
}

impl<F: Real> std::fmt::Debug for Var<'_, F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}, {:?})", self.id, self.shape())
    }
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    /// Evaluation tape: dropout is the identity.
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(256)),
            rng: None,
            dropout_p: F::zero(),
        }
    }

    /// Training tape with seeded dropout of probability `p`.
    pub fn training(seed: u64, p: f64) -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(1024)),
            rng: Some(RefCell::new(ChaCha8Rng::seed_from_u64(seed))),
            dropout_p: cst(p),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Var<'_, F> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Arc::new(value),
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].needs_grad)
    }

    fn val(&self, id: usize) -> Arc<Tensor<F>> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    /// A constant input (never receives gradient).
    pub fn constant(&self, t: Tensor<F>) -> Var<'_, F> {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf that collects gradient when `requires_grad` is set.
    pub fn leaf(&self, t: Tensor<F>, requires_grad: bool) -> Var<'_, F> {
        self.push(t, Op::Leaf, requires_grad)
    }

    /// Binds a stored parameter. Frozen parameters are recorded as constants.
    pub fn param(&self, store: &ParamStore<F>, id: ParamId) -> Var<'_, F> {
        let p = store.get(id);
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Arc::clone(&p.value),
            op: Op::Param(id),
            needs_grad: !p.frozen,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Records the output of an externally computed operation.
    pub fn custom<'t>(
        &'t self,
        inputs: &[Var<'t, F>],
        output: Tensor<F>,
        op: Box<dyn CustomOp<F>>,
    ) -> Var<'t, F> {
        let ids: Vec<usize> = inputs.iter().map(|v| v.id).collect();
        let needs = self.needs(&ids);
        self.push(output, Op::Custom(ids, op), needs)
    }

    /// Reverse pass from a scalar loss.
    ///
    /// Gradients are returned, not stored; callers accumulate them into a
    /// [`ParamStore`] or [`super::GradBuffer`], so repeated calls add up.
    pub fn backward(&self, loss: Var<'_, F>) -> Result<Grads<F>> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let n = loss.id + 1;
        let mut grads: Vec<Option<Vec<F>>> = (0..n).map(|_| None).collect();
        grads[loss.id] = Some(vec![F::one()]);
        let mut leaf_grads = Vec::new();
        let mut param_grads = Vec::new();
        for id in (0..n).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    leaf_grads.push((id, g));
                    continue;
                }
                Op::Param(pid) => {
                    param_grads.push((*pid, g));
                    continue;
                }
                _ => {}
            }
            propagate(&nodes, node, &g, &mut grads);
        }
        Ok(Grads {
            leaf_grads,
            param_grads,
        })
    }
}

fn add_grad<F: Real>(grads: &mut [Option<Vec<F>>], id: usize, g: Vec<F>) {
    match &mut grads[id] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

fn add_grad_with<F: Real>(
    grads: &mut [Option<Vec<F>>],
    id: usize,
    len: usize,
    f: impl FnOnce(&mut [F]),
) {
    let acc = grads[id].get_or_insert_with(|| vec![F::zero(); len]);
    f(acc);
}

fn propagate<F: Real>(nodes: &[Node<F>], node: &Node<F>, g: &[F], grads: &mut [Option<Vec<F>>]) {
    let out = &node.value;
    let ng = |i: usize| nodes[i].needs_grad;
    match &node.op {
        Op::Leaf | Op::Param(_) => unreachable!(),
        Op::MatMul { a, b, b_t } => {
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            let m = av.shape()[0];
            let k = av.shape()[1];
            let n = out.shape()[1];
            if ng(*a) {
                // da = g · bᵀ  (or g · b when b was used transposed)
                add_grad_with(grads, *a, m * k, |da| {
                    F::gemm(m, n, k, g, false, bv.data(), !*b_t, da, true)
                });
            }
            if ng(*b) {
                if *b_t {
                    // b is n×k: db = gᵀ · a
                    add_grad_with(grads, *b, n * k, |db| {
                        F::gemm(n, m, k, g, true, av.data(), false, db, true)
                    });
                } else {
                    add_grad_with(grads, *b, k * n, |db| {
                        F::gemm(k, m, n, av.data(), true, g, false, db, true)
                    });
                }
            }
        }
        Op::Add(a, b) => {
            if ng(*a) {
                add_grad(grads, *a, g.to_vec());
            }
            if ng(*b) {
                add_grad(grads, *b, g.to_vec());
            }
        }
        Op::AddRow(x, bias) => {
            if ng(*x) {
                add_grad(grads, *x, g.to_vec());
            }
            if ng(*bias) {
                let c = out.cols();
                add_grad_with(grads, *bias, c, |db| {
                    for row in g.chunks(c) {
                        db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                    }
                });
            }
        }
        Op::OuterAdd(a, b) => {
            let r1 = nodes[*a].value.rows();
            let r2 = nodes[*b].value.rows();
            let c = out.cols();
            if ng(*a) {
                add_grad_with(grads, *a, r1 * c, |da| {
                    for i in 0..r1 {
                        let dst = &mut da[i * c..(i + 1) * c];
                        for j in 0..r2 {
                            let src = &g[(i * r2 + j) * c..(i * r2 + j + 1) * c];
                            dst.iter_mut().zip(src).for_each(|(d, &v)| *d += v);
                        }
                    }
                });
            }
            if ng(*b) {
                add_grad_with(grads, *b, r2 * c, |db| {
                    for i in 0..r1 {
                        for j in 0..r2 {
                            let src = &g[(i * r2 + j) * c..(i * r2 + j + 1) * c];
                            let dst = &mut db[j * c..(j + 1) * c];
                            dst.iter_mut().zip(src).for_each(|(d, &v)| *d += v);
                        }
                    }
                });
            }
        }
        Op::Mul(a, b) => {
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            if ng(*a) {
                add_grad(grads, *a, g.iter().zip(bv.data()).map(|(&x, &y)| x * y).collect());
            }
            if ng(*b) {
                add_grad(grads, *b, g.iter().zip(av.data()).map(|(&x, &y)| x * y).collect());
            }
        }
        Op::Scale(a, s) => add_grad(grads, *a, g.iter().map(|&x| x * *s).collect()),
        Op::Reshape(a) => add_grad(grads, *a, g.to_vec()),
        Op::Transpose(a) => {
            let r = out.shape()[0];
            let c = out.shape()[1];
            // out is r×c, input is c×r
            add_grad_with(grads, *a, r * c, |da| {
                for i in 0..r {
                    for j in 0..c {
                        da[j * r + i] += g[i * c + j];
                    }
                }
            });
        }
        Op::Gather(table, ids) => {
            let tv = &nodes[*table].value;
            let d = tv.cols();
            add_grad_with(grads, *table, tv.numel(), |dt| {
                for (row, &id) in ids.iter().enumerate() {
                    let dst = &mut dt[id * d..(id + 1) * d];
                    dst.iter_mut()
                        .zip(&g[row * d..(row + 1) * d])
                        .for_each(|(x, &v)| *x += v);
                }
            });
        }
        Op::LogSoftmax(a) => {
            let c = out.cols();
            let mut dx = g.to_vec();
            for (row, y) in dx.chunks_mut(c).zip(out.data().chunks(c)) {
                let s: F = row.iter().copied().sum();
                row.iter_mut().zip(y).for_each(|(d, &yv)| *d -= yv.exp() * s);
            }
            add_grad(grads, *a, dx);
        }
        Op::Softmax(a) => {
            let c = out.cols();
            let mut dx = g.to_vec();
            for (row, y) in dx.chunks_mut(c).zip(out.data().chunks(c)) {
                let dot: F = row.iter().zip(y).map(|(&d, &yv)| d * yv).sum();
                row.iter_mut().zip(y).for_each(|(d, &yv)| *d = yv * (*d - dot));
            }
            add_grad(grads, *a, dx);
        }
        Op::LogSumExp(a) => {
            let x = &nodes[*a].value;
            let c = x.cols();
            let mut dx = x.data().to_vec();
            for (i, row) in dx.chunks_mut(c).enumerate() {
                let lse = out.data()[i];
                row.iter_mut().for_each(|v| *v = (*v - lse).exp() * g[i]);
            }
            add_grad(grads, *a, dx);
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        } => {
            let c = out.cols();
            let gv = &nodes[*gamma].value;
            if ng(*gamma) {
                add_grad_with(grads, *gamma, c, |dg| {
                    for (gr, xr) in g.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            dg[j] += gr[j] * xr[j];
                        }
                    }
                });
            }
            if ng(*beta) {
                add_grad_with(grads, *beta, c, |db| {
                    for gr in g.chunks(c) {
                        db.iter_mut().zip(gr).for_each(|(d, &v)| *d += v);
                    }
                });
            }
            if ng(*x) {
                let inv_c = F::one() / cst(c as f64);
                let mut dx = vec![F::zero(); g.len()];
                for (i, ((dr, gr), xr)) in dx
                    .chunks_mut(c)
                    .zip(g.chunks(c))
                    .zip(xhat.chunks(c))
                    .enumerate()
                {
                    let mut mean_d = F::zero();
                    let mut mean_dx = F::zero();
                    for j in 0..c {
                        let dxh = gr[j] * gv.data()[j];
                        mean_d += dxh;
                        mean_dx += dxh * xr[j];
                    }
                    mean_d *= inv_c;
                    mean_dx *= inv_c;
                    for j in 0..c {
                        let dxh = gr[j] * gv.data()[j];
                        dr[j] = rstd[i] * (dxh - mean_d - xr[j] * mean_dx);
                    }
                }
                add_grad(grads, *x, dx);
            }
        }
        Op::Gelu(a) => {
            let x = &nodes[*a].value;
            add_grad(
                grads,
                *a,
                x.data().iter().zip(g).map(|(&v, &gv)| gv * gelu_grad(v)).collect(),
            );
        }
        Op::Relu(a) => {
            let x = &nodes[*a].value;
            add_grad(
                grads,
                *a,
                x.data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > F::zero() { gv } else { F::zero() })
                    .collect(),
            );
        }
        Op::Tanh(a) => add_grad(
            grads,
            *a,
            out.data()
                .iter()
                .zip(g)
                .map(|(&y, &gv)| gv * (F::one() - y * y))
                .collect(),
        ),
        Op::Dropout(a, mask) => add_grad(grads, *a, g.iter().zip(mask).map(|(&x, &m)| x * m).collect()),
        Op::MaskedFill(a, keep) => add_grad(
            grads,
            *a,
            g.iter()
                .zip(keep.iter())
                .map(|(&x, &k)| if k { x } else { F::zero() })
                .collect(),
        ),
        Op::SliceCols(a, start) => {
            let src = &nodes[*a].value;
            let c_in = src.cols();
            let c_out = out.cols();
            let r = out.rows();
            add_grad_with(grads, *a, src.numel(), |da| {
                for i in 0..r {
                    let dst = &mut da[i * c_in + start..i * c_in + start + c_out];
                    dst.iter_mut()
                        .zip(&g[i * c_out..(i + 1) * c_out])
                        .for_each(|(d, &v)| *d += v);
                }
            });
        }
        Op::ConcatCols(parts) => {
            let c_out = out.cols();
            let r = out.rows();
            let mut offset = 0;
            for &p in parts {
                let pc = nodes[p].value.cols();
                if ng(p) {
                    add_grad_with(grads, p, r * pc, |dp| {
                        for i in 0..r {
                            dp[i * pc..(i + 1) * pc]
                                .iter_mut()
                                .zip(&g[i * c_out + offset..i * c_out + offset + pc])
                                .for_each(|(d, &v)| *d += v);
                        }
                    });
                }
                offset += pc;
            }
        }
        Op::Sum(a) => {
            let n = nodes[*a].value.numel();
            add_grad(grads, *a, vec![g[0]; n]);
        }
        Op::Custom(inputs, op) => {
            let vals: Vec<&Tensor<F>> = inputs.iter().map(|&i| nodes[i].value.as_ref()).collect();
            let gs = op.backward(&vals, out, g);
            for (&i, gi) in inputs.iter().zip(gs) {
                if let Some(gi) = gi {
                    if ng(i) {
                        add_grad(grads, i, gi);
                    }
                }
            }
        }
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044715;

#[inline]
fn gelu<F: Real>(x: F) -> F {
    let k: F = cst(GELU_K);
    let c: F = cst(GELU_C);
    let half: F = cst(0.5);
    half * x * (F::one() + (k * (x + c * x * x * x)).tanh())
}

#[inline]
fn gelu_grad<F: Real>(x: F) -> F {
    let k: F = cst(GELU_K);
    let c: F = cst(GELU_C);
    let half: F = cst(0.5);
    let three: F = cst(3.0);
    let t = (k * (x + c * x * x * x)).tanh();
    half * (F::one() + t) + half * x * (F::one() - t * t) * k * (F::one() + three * c * x * x)
}

/// Gradients produced by one backward pass.
pub struct Grads<F> {
    leaf_grads: Vec<(usize, Vec<F>)>,
    param_grads: Vec<(ParamId, Vec<F>)>,
}

impl<F: Real> Grads<F> {
    /// Gradient of a leaf created with `requires_grad`, if it was reached.
    pub fn wrt(&self, v: Var<'_, F>) -> Option<&[F]> {
        self.leaf_grads
            .iter()
            .find(|(id, _)| *id == v.id)
            .map(|(_, g)| g.as_slice())
    }

    /// Per-binding parameter gradients (a parameter bound twice appears twice).
    pub fn params(&self) -> &[(ParamId, Vec<F>)] {
        &self.param_grads
    }

    /// Adds parameter gradients into the store's grad fields.
    pub fn accumulate_into(&self, store: &mut ParamStore<F>) {
        for (id, g) in &self.param_grads {
            if store.owns(*id) {
                store.accumulate_grad(*id, g);
            }
        }
    }
}

impl<'t, F: Real> Var<'t, F> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<F> {
        self.tape
    }

    pub fn value(&self) -> Arc<Tensor<F>> {
        self.tape.val(self.id)
    }

    /// Borrowed view of the value; do not hold across op calls.
    pub fn borrow(&self) -> Ref<'_, Tensor<F>> {
        Ref::map(self.tape.nodes.borrow(), |n| n[self.id].value.as_ref())
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].needs_grad
    }

    fn unary(self, value: Tensor<F>, op: Op<F>) -> Var<'t, F> {
        let needs = self.requires_grad();
        self.tape.push(value, op, needs)
    }

    fn binary(self, other: Var<'t, F>, value: Tensor<F>, op: Op<F>) -> Var<'t, F> {
        let needs = self.tape.needs(&[self.id, other.id]);
        self.tape.push(value, op, needs)
    }

    fn matmul_impl(self, other: Var<'t, F>, b_t: bool) -> Result<Var<'t, F>> {
        let a = self.value();
        let b = other.value();
        let (sa, sb) = (a.shape(), b.shape());
        let (m, k) = match sa {
            [m, k] => (*m, *k),
            _ => return Err(Error::shape("matmul", sa, sb)),
        };
        let (kb, n) = match (sb, b_t) {
            ([r, c], false) => (*r, *c),
            ([r, c], true) => (*c, *r),
            _ => return Err(Error::shape("matmul", sa, sb)),
        };
        if k != kb {
            return Err(Error::shape("matmul", sa, sb));
        }
        let mut out = vec![F::zero(); m * n];
        F::gemm(m, k, n, a.data(), false, b.data(), b_t, &mut out, false);
        Ok(self.binary(
            other,
            Tensor::from_parts(vec![m, n], out),
            Op::MatMul {
                a: self.id,
                b: other.id,
                b_t,
            },
        ))
    }

    /// Matrix product `self[m×k] · other[k×n]`.
    pub fn matmul(self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        self.matmul_impl(other, false)
    }

    /// `self[m×k] · other[n×k]ᵀ`.
    pub fn matmul_t(self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        self.matmul_impl(other, true)
    }

    pub fn add(self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        let a = self.value();
        let b = other.value();
        if a.shape() != b.shape() {
            return Err(Error::shape("add", a.shape(), b.shape()));
        }
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
        Ok(self.binary(
            other,
            Tensor::from_parts(a.shape().to_vec(), data),
            Op::Add(self.id, other.id),
        ))
    }

    /// Adds a vector to every row (broadcast over the last dimension).
    pub fn add_row(self, bias: Var<'t, F>) -> Result<Var<'t, F>> {
        let a = self.value();
        let b = bias.value();
        if b.numel() != a.cols() {
            return Err(Error::shape("add_row", a.shape(), b.shape()));
        }
        let mut data = a.data().to_vec();
        for row in data.chunks_mut(a.cols()) {
            row.iter_mut().zip(b.data()).for_each(|(x, &y)| *x += y);
        }
        Ok(self.binary(
            bias,
            Tensor::from_parts(a.shape().to_vec(), data),
            Op::AddRow(self.id, bias.id),
        ))
    }

    /// Pairwise row sums: `self[r1×n] ⊕ other[r2×n] → [(r1·r2)×n]`, row
    /// `i·r2 + j` holding `self_i + other_j`.
    pub fn outer_add(self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        let a = self.value();
        let b = other.value();
        if a.cols() != b.cols() || a.shape().len() != 2 || b.shape().len() != 2 {
            return Err(Error::shape("outer_add", a.shape(), b.shape()));
        }
        let (r1, r2, c) = (a.rows(), b.rows(), a.cols());
        let mut data = Vec::with_capacity(r1 * r2 * c);
        for i in 0..r1 {
            let ar = a.row(i);
            for j in 0..r2 {
                data.extend(ar.iter().zip(b.row(j)).map(|(&x, &y)| x + y));
            }
        }
        Ok(self.binary(
            other,
            Tensor::from_parts(vec![r1 * r2, c], data),
            Op::OuterAdd(self.id, other.id),
        ))
    }

    pub fn mul(self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        let a = self.value();
        let b = other.value();
        if a.shape() != b.shape() {
            return Err(Error::shape("mul", a.shape(), b.shape()));
        }
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
        Ok(self.binary(
            other,
            Tensor::from_parts(a.shape().to_vec(), data),
            Op::Mul(self.id, other.id),
        ))
    }

    pub fn scale(self, s: F) -> Var<'t, F> {
        let a = self.value();
        let data = a.data().iter().map(|&x| x * s).collect();
        self.unary(Tensor::from_parts(a.shape().to_vec(), data), Op::Scale(self.id, s))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, F>> {
        let t = self.value().reshape(shape)?;
        Ok(self.unary(t, Op::Reshape(self.id)))
    }

    pub fn transpose(self) -> Result<Var<'t, F>> {
        let a = self.value();
        let (r, c) = match a.shape() {
            [r, c] => (*r, *c),
            s => return Err(Error::shape("transpose", s, &[2])),
        };
        let mut data = vec![F::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = a.data()[i * c + j];
            }
        }
        Ok(self.unary(Tensor::from_parts(vec![c, r], data), Op::Transpose(self.id)))
    }

    /// Row gather (embedding lookup): `self[V×d]`, ids → `[n×d]`.
    pub fn gather(self, ids: &[usize]) -> Result<Var<'t, F>> {
        let t = self.value();
        let v = t.rows();
        let d = t.cols();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::TokenRange { id, size: v });
            }
            data.extend_from_slice(t.row(id));
        }
        Ok(self.unary(
            Tensor::from_parts(vec![ids.len(), d], data),
            Op::Gather(self.id, ids.to_vec()),
        ))
    }

    pub fn log_softmax(self) -> Result<Var<'t, F>> {
        let a = self.value();
        if !a.is_finite() {
            return Err(Error::Numeric("log_softmax of non-finite input".into()));
        }
        let mut data = a.data().to_vec();
        for row in data.chunks_mut(a.cols()) {
            log_softmax_in_place(row);
        }
        Ok(self.unary(
            Tensor::from_parts(a.shape().to_vec(), data),
            Op::LogSoftmax(self.id),
        ))
    }

    pub fn softmax(self) -> Var<'t, F> {
        let a = self.value();
        let mut data = a.data().to_vec();
        for row in data.chunks_mut(a.cols()) {
            softmax_in_place(row);
        }
        self.unary(Tensor::from_parts(a.shape().to_vec(), data), Op::Softmax(self.id))
    }

    /// Log-sum-exp over the last dimension.
    pub fn logsumexp(self) -> Result<Var<'t, F>> {
        let a = self.value();
        let c = a.cols();
        let data: Vec<F> = a.data().chunks(c).map(logsumexp_slice).collect();
        let mut shape = a.shape()[..a.shape().len().saturating_sub(1)].to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(self.unary(Tensor::from_parts(shape, data), Op::LogSumExp(self.id)))
    }

    /// Layer normalization over the last dimension with affine parameters.
    pub fn layer_norm(self, gamma: Var<'t, F>, beta: Var<'t, F>, eps: f64) -> Result<Var<'t, F>> {
        let x = self.value();
        let g = gamma.value();
        let b = beta.value();
        let c = x.cols();
        if g.numel() != c || b.numel() != c {
            return Err(Error::shape("layer_norm", x.shape(), g.shape()));
        }
        let eps: F = cst(eps);
        let inv_c = F::one() / cst(c as f64);
        let mut xhat = Vec::with_capacity(x.numel());
        let mut rstd = Vec::with_capacity(x.rows());
        let mut out = Vec::with_capacity(x.numel());
        for row in x.data().chunks(c) {
            let mean = row.iter().copied().sum::<F>() * inv_c;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_c;
            let r = F::one() / (var + eps).sqrt();
            rstd.push(r);
            for j in 0..c {
                let h = (row[j] - mean) * r;
                xhat.push(h);
                out.push(h * g.data()[j] + b.data()[j]);
            }
        }
        let needs = self.tape.needs(&[self.id, gamma.id, beta.id]);
        Ok(self.tape.push(
            Tensor::from_parts(x.shape().to_vec(), out),
            Op::LayerNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                rstd,
            },
            needs,
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(self) -> Var<'t, F> {
        let a = self.value();
        let data = a.data().iter().map(|&x| gelu(x)).collect();
        self.unary(Tensor::from_parts(a.shape().to_vec(), data), Op::Gelu(self.id))
    }

    pub fn relu(self) -> Var<'t, F> {
        let a = self.value();
        let data = a.data().iter().map(|&x| x.max(F::zero())).collect();
        self.unary(Tensor::from_parts(a.shape().to_vec(), data), Op::Relu(self.id))
    }

    pub fn tanh(self) -> Var<'t, F> {
        let a = self.value();
        let data = a.data().iter().map(|&x| x.tanh()).collect();
        self.unary(Tensor::from_parts(a.shape().to_vec(), data), Op::Tanh(self.id))
    }

    /// Inverted dropout; identity on evaluation tapes or when p = 0.
    pub fn dropout(self) -> Var<'t, F> {
        let p = self.tape.dropout_p;
        let Some(rng) = &self.tape.rng else { return self };
        if p <= F::zero() {
            return self;
        }
        let a = self.value();
        let keep_scale = F::one() / (F::one() - p);
        let pf = p.to_f64c();
        let mut rng = rng.borrow_mut();
        let mask: Vec<F> = (0..a.numel())
            .map(|_| {
                if rng.gen::<f64>() < pf {
                    F::zero()
                } else {
                    keep_scale
                }
            })
            .collect();
        drop(rng);
        let data = a.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        self.unary(Tensor::from_parts(a.shape().to_vec(), data), Op::Dropout(self.id, mask))
    }

    /// Replaces entries where `keep` is false with [`Real::MASK_FILL`].
    pub fn masked_fill(self, keep: Arc<Vec<bool>>) -> Result<Var<'t, F>> {
        let a = self.value();
        if keep.len() != a.numel() {
            return Err(Error::shape("masked_fill", a.shape(), &[keep.len()]));
        }
        let data = a
            .data()
            .iter()
            .zip(keep.iter())
            .map(|(&x, &k)| if k { x } else { F::MASK_FILL })
            .collect();
        Ok(self.unary(
            Tensor::from_parts(a.shape().to_vec(), data),
            Op::MaskedFill(self.id, keep),
        ))
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(self, start: usize, len: usize) -> Result<Var<'t, F>> {
        let a = self.value();
        let c = a.cols();
        if start + len > c || a.shape().len() != 2 {
            return Err(Error::shape("slice_cols", a.shape(), &[start, len]));
        }
        let r = a.rows();
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&a.row(i)[start..start + len]);
        }
        Ok(self.unary(Tensor::from_parts(vec![r, len], data), Op::SliceCols(self.id, start)))
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat_cols(parts: &[Var<'t, F>]) -> Result<Var<'t, F>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero parts".into()))?;
        let tape = first.tape;
        let vals: Vec<Arc<Tensor<F>>> = parts.iter().map(|p| p.value()).collect();
        let r = vals[0].rows();
        if let Some(bad) = vals.iter().find(|v| v.rows() != r || v.shape().len() != 2) {
            return Err(Error::shape("concat_cols", vals[0].shape(), bad.shape()));
        }
        let total: usize = vals.iter().map(|v| v.cols()).sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for v in &vals {
                data.extend_from_slice(v.row(i));
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let needs = tape.needs(&ids);
        Ok(tape.push(Tensor::from_parts(vec![r, total], data), Op::ConcatCols(ids), needs))
    }

    /// Sum of all entries.
    pub fn sum(self) -> Var<'t, F> {
        let s: F = self.value().data().iter().copied().sum();
        self.unary(Tensor::scalar(s), Op::Sum(self.id))
    }

    /// Scalar convenience: `self + other` for scalars (or equal shapes).
    pub fn plus(self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        self.add(other)
    }
}
