//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every differentiable operation appends a node holding its output value and
//! the references it needs for the vector-Jacobian product. [`Tape::backward`]
//! replays the nodes in reverse order, which is a valid reverse topological
//! order because inputs always precede outputs.

use crate::error::{Error, Result};
use crate::numcore::tensor::Tensor;
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Unary {
    Relu,
    Gelu,
    Sigmoid,
    Tanh,
    Exp,
    Log,
}

/// How an operand of a broadcasting binary op maps onto output indices.
#[derive(Clone, Debug)]
pub(crate) enum Bcast {
    Same,
    /// Operand equals the trailing dims of the output: `idx = i % len`.
    Suffix(usize),
    /// Operand equals the leading dims of the output: `idx = i / inner`.
    Prefix(usize),
    Map(Vec<usize>),
}

impl Bcast {
    #[inline(always)]
    pub(crate) fn at(&self, i: usize) -> usize {
        match self {
            Bcast::Same => i,
            Bcast::Suffix(len) => i % len,
            Bcast::Prefix(inner) => i / inner,
            Bcast::Map(m) => m[i],
        }
    }

    /// Calls `f(i, self.at(i))` for `i` in `0..n`, in order, with the dispatch
    /// hoisted out of the loop.
    #[inline(always)]
    pub(crate) fn for_each(&self, n: usize, mut f: impl FnMut(usize, usize)) {
        match self {
            Bcast::Same => (0..n).for_each(|i| f(i, i)),
            Bcast::Suffix(len) => {
                for start in (0..n).step_by(*len) {
                    for j in 0..*len {
                        f(start + j, j);
                    }
                }
            }
            Bcast::Prefix(inner) => {
                for o in 0..n / inner {
                    for q in 0..*inner {
                        f(o * inner + q, o);
                    }
                }
            }
            Bcast::Map(m) => m[..n].iter().enumerate().for_each(|(i, &j)| f(i, j)),
        }
    }
}

/// Visits `(i, ia.at(i), ib.at(i))`; at least one side is usually `Same`.
#[inline(always)]
pub(crate) fn for_each_pair(ia: &Bcast, ib: &Bcast, n: usize, mut f: impl FnMut(usize, usize, usize)) {
    match (ia, ib) {
        (Bcast::Same, _) => ib.for_each(n, |i, j| f(i, i, j)),
        (_, Bcast::Same) => ia.for_each(n, |i, j| f(i, j, i)),
        _ => (0..n).for_each(|i| f(i, ia.at(i), ib.at(i))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Binary {
    Add,
    Sub,
    Mul,
}

pub(crate) enum Op<T> {
    Leaf,
    Binary { kind: Binary, a: Var, b: Var, ia: Bcast, ib: Bcast },
    Scale(Var, T),
    Unary(Var, Unary),
    MatMul { a: Var, b: Var, rows: usize, inner: usize, cols: usize },
    BatchMatMul { a: Var, b: Var, batch: usize, rows: usize, inner: usize, cols: usize, trans_b: bool },
    Permute { x: Var, perm: Vec<usize> },
    Reshape(Var),
    Softmax { x: Var, outer: usize, len: usize, inner: usize },
    GatedSoftmax { x: Var, gate: Var, rows: usize, cols: usize, groups: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, mean: Vec<T>, rstd: Vec<T> },
    Dropout { x: Var, scale: Vec<T> },
    Concat { inputs: Vec<(Var, usize)>, outer: usize, inner: usize },
    Slice { x: Var, outer: usize, inner: usize, in_extent: usize, start: usize, len: usize },
    Gather { table: Var, idx: Vec<usize>, row: usize },
    Scatter { src: Var, idx: Vec<usize>, row: usize },
    Sum(Var),
    Mean(Var),
    SumAxis { x: Var, outer: usize, len: usize, inner: usize },
    BceLogits { x: Var, target: Vec<T> },
    Focal { p: Var, labels: Vec<T>, gamma: T, alpha: Option<T> },
    Kl { p: Var, q: Var, cols: usize, row_weight: Vec<T> },
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
    pub(crate) grad: Option<Vec<T>>,
}

/// Ordered record of executed operations.
pub struct Tape<T: Scalar> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every record; previously issued [`Var`]s become invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last [`backward`](Self::backward) loss with respect to `v`;
    /// all zeros when `v` was not reachable from the loss.
    pub fn grad(&self, v: Var) -> Tensor<T> {
        let node = &self.nodes[v.0];
        match &node.grad {
            Some(g) => Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"),
            None => Tensor::zeros(node.value.shape()),
        }
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value, op, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    /// Errors with [`Error::NonFinite`] if `v` holds NaN or infinity.
    pub fn check_finite(&self, v: Var, what: &str) -> Result<()> {
        if self.value(v).is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    /// Populates gradients of the scalar `loss` for every node that requires them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.nodes[i].grad.take() else { continue };
            let contributions = self.vjp(i, &g);
            self.nodes[i].grad = Some(g);
            for (v, dg) in contributions {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut self.nodes[v.0].grad {
                    Some(acc) => acc.iter_mut().zip(&dg).for_each(|(a, d)| *a += *d),
                    slot @ None => *slot = Some(dg),
                }
            }
        }
        Ok(())
    }

    fn val(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Vector-Jacobian product of node `i` given its output gradient `g`.
    fn vjp(&self, i: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[i];
        let out = node.value.data();
        let mut res = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Binary { kind, a, b, ia, ib } => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let n = g.len();
                if self.needs(*a) {
                    let mut ga = vec![T::zero(); av.len()];
                    match kind {
                        Binary::Add | Binary::Sub => ia.for_each(n, |k, j| ga[j] += g[k]),
                        Binary::Mul => for_each_pair(ia, ib, n, |k, ja, jb| ga[ja] += g[k] * bv[jb]),
                    }
                    res.push((*a, ga));
                }
                if self.needs(*b) {
                    let mut gb = vec![T::zero(); bv.len()];
                    match kind {
                        Binary::Add => ib.for_each(n, |k, j| gb[j] += g[k]),
                        Binary::Sub => ib.for_each(n, |k, j| gb[j] -= g[k]),
                        Binary::Mul => for_each_pair(ia, ib, n, |k, ja, jb| gb[jb] += g[k] * av[ja]),
                    }
                    res.push((*b, gb));
                }
            }
            Op::Scale(x, c) => res.push((*x, g.iter().map(|&gk| gk * *c).collect())),
            Op::Unary(x, kind) => {
                let xv = self.val(*x);
                let gx = g
                    .iter()
                    .zip(xv)
                    .zip(out)
                    .map(|((&gk, &xk), &yk)| gk * unary_derivative(*kind, xk, yk))
                    .collect();
                res.push((*x, gx));
            }
            Op::MatMul { a, b, rows, inner, cols } => {
                let (r, s, t) = (*rows, *inner, *cols);
                if self.needs(*a) {
                    // dA = dC · Bᵀ
                    let mut ga = vec![T::zero(); r * s];
                    T::gemm(r, t, s, T::one(), g, t, 1, self.val(*b), 1, t, T::zero(), &mut ga, s, 1);
                    res.push((*a, ga));
                }
                if self.needs(*b) {
                    // dB = Aᵀ · dC
                    let mut gb = vec![T::zero(); s * t];
                    T::gemm(s, r, t, T::one(), self.val(*a), 1, s, g, t, 1, T::zero(), &mut gb, t, 1);
                    res.push((*b, gb));
                }
            }
            Op::BatchMatMul { a, b, batch, rows, inner, cols, trans_b } => {
                let (r, s, t) = (*rows, *inner, *cols);
                let (av, bv) = (self.val(*a), self.val(*b));
                let mut ga = if self.needs(*a) { Some(vec![T::zero(); av.len()]) } else { None };
                let mut gb = if self.needs(*b) { Some(vec![T::zero(); bv.len()]) } else { None };
                for n in 0..*batch {
                    let gc = &g[n * r * t..(n + 1) * r * t];
                    let am = &av[n * r * s..(n + 1) * r * s];
                    let bm = &bv[n * s * t..(n + 1) * s * t];
                    if let Some(ga) = ga.as_mut() {
                        let dst = &mut ga[n * r * s..(n + 1) * r * s];
                        if *trans_b {
                            // C = A·Bᵀ with B [t,s]: dA = dC·B
                            T::gemm(r, t, s, T::one(), gc, t, 1, bm, s, 1, T::zero(), dst, s, 1);
                        } else {
                            T::gemm(r, t, s, T::one(), gc, t, 1, bm, 1, t, T::zero(), dst, s, 1);
                        }
                    }
                    if let Some(gb) = gb.as_mut() {
                        let dst = &mut gb[n * s * t..(n + 1) * s * t];
                        if *trans_b {
                            // dB = dCᵀ·A, shape [t,s]
                            T::gemm(t, r, s, T::one(), gc, 1, t, am, s, 1, T::zero(), dst, s, 1);
                        } else {
                            T::gemm(s, r, t, T::one(), am, 1, s, gc, t, 1, T::zero(), dst, t, 1);
                        }
                    }
                }
                if let Some(ga) = ga {
                    res.push((*a, ga));
                }
                if let Some(gb) = gb {
                    res.push((*b, gb));
                }
            }
            Op::Permute { x, perm } => {
                let in_shape = self.nodes[x.0].value.shape();
                let mut gx = vec![T::zero(); g.len()];
                for_each_permuted(in_shape, perm, |out_i, in_i| gx[in_i] += g[out_i]);
                res.push((*x, gx));
            }
            Op::Reshape(x) => res.push((*x, g.to_vec())),
            Op::Softmax { x, outer, len, inner } => {
                let mut gx = vec![T::zero(); g.len()];
                for o in 0..*outer {
                    for j in 0..*inner {
                        let base = o * len * inner + j;
                        let mut dot = T::zero();
                        for a in 0..*len {
                            let k = base + a * inner;
                            dot += out[k] * g[k];
                        }
                        for a in 0..*len {
                            let k = base + a * inner;
                            gx[k] = out[k] * (g[k] - dot);
                        }
                    }
                }
                res.push((*x, gx));
            }
            Op::GatedSoftmax { x, gate, rows, cols, groups } => {
                let (xv, gv) = (self.val(*x), self.val(*gate));
                let c = *cols;
                let mut gx = vec![T::zero(); xv.len()];
                let mut gg = if self.needs(*gate) { Some(vec![T::zero(); gv.len()]) } else { None };
                let per_gate = *rows * *groups;
                for (row, (xr, yr)) in xv.chunks(c).zip(out.chunks(c)).enumerate() {
                    let gate_row = row / per_gate;
                    let gr = &gv[gate_row * c..(gate_row + 1) * c];
                    let go = &g[row * c..(row + 1) * c];
                    let dot: T = yr.iter().zip(go).map(|(&y, &d)| y * d).sum();
                    for k in 0..c {
                        gx[row * c + k] = yr[k] * (go[k] - dot);
                    }
                    if let Some(gg) = gg.as_mut() {
                        if let Some((max, z)) = gated_norm(xr, gr) {
                            for k in 0..c {
                                let e = gated_exp(xr[k] - max);
                                gg[gate_row * c + k] += e / z * (go[k] - dot);
                            }
                        }
                    }
                }
                res.push((*x, gx));
                if let Some(gg) = gg {
                    res.push((*gate, gg));
                }
            }
            Op::LayerNorm { x, gain, bias, mean, rstd } => {
                let xv = self.val(*x);
                let gain_v = self.val(*gain);
                let d = gain_v.len();
                let inv_d = T::one() / T::of(d as f64);
                let mut gx = vec![T::zero(); xv.len()];
                let mut ggain = vec![T::zero(); d];
                let mut gbias = vec![T::zero(); d];
                for (r, (xr, gr)) in xv.chunks(d).zip(g.chunks(d)).enumerate() {
                    let (mu, rs) = (mean[r], rstd[r]);
                    let mut sum_dxh = T::zero();
                    let mut sum_dxh_xh = T::zero();
                    for k in 0..d {
                        let xh = (xr[k] - mu) * rs;
                        let dxh = gr[k] * gain_v[k];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh;
                        ggain[k] += gr[k] * xh;
                        gbias[k] += gr[k];
                    }
                    for k in 0..d {
                        let xh = (xr[k] - mu) * rs;
                        let dxh = gr[k] * gain_v[k];
                        gx[r * d + k] = rs * (dxh - sum_dxh * inv_d - xh * sum_dxh_xh * inv_d);
                    }
                }
                res.push((*x, gx));
                res.push((*gain, ggain));
                res.push((*bias, gbias));
            }
            Op::Dropout { x, scale } => {
                res.push((*x, g.iter().zip(scale).map(|(&gk, &s)| gk * s).collect()));
            }
            Op::Concat { inputs, outer, inner } => {
                let total: usize = inputs.iter().map(|(_, e)| e).sum();
                let mut offset = 0;
                for (v, extent) in inputs {
                    let chunk = extent * inner;
                    if self.needs(*v) {
                        let mut gv = Vec::with_capacity(outer * chunk);
                        for o in 0..*outer {
                            let start = o * total * inner + offset * inner;
                            gv.extend_from_slice(&g[start..start + chunk]);
                        }
                        res.push((*v, gv));
                    }
                    offset += extent;
                }
            }
            Op::Slice { x, outer, inner, in_extent, start, len } => {
                let mut gx = vec![T::zero(); outer * in_extent * inner];
                let chunk = len * inner;
                for o in 0..*outer {
                    let dst = o * in_extent * inner + start * inner;
                    gx[dst..dst + chunk].copy_from_slice(&g[o * chunk..(o + 1) * chunk]);
                }
                res.push((*x, gx));
            }
            Op::Gather { table, idx, row } => {
                let mut gt = vec![T::zero(); self.val(*table).len()];
                for (k, &src) in idx.iter().enumerate() {
                    let dst = &mut gt[src * row..(src + 1) * row];
                    dst.iter_mut().zip(&g[k * row..(k + 1) * row]).for_each(|(a, &b)| *a += b);
                }
                res.push((*table, gt));
            }
            Op::Scatter { src, idx, row } => {
                let mut gs = Vec::with_capacity(idx.len() * row);
                for &dst in idx {
                    gs.extend_from_slice(&g[dst * row..(dst + 1) * row]);
                }
                res.push((*src, gs));
            }
            Op::Sum(x) => res.push((*x, vec![g[0]; self.val(*x).len()])),
            Op::Mean(x) => {
                let n = self.val(*x).len();
                res.push((*x, vec![g[0] / T::of(n as f64); n]));
            }
            Op::SumAxis { x, outer, len, inner } => {
                let mut gx = vec![T::zero(); outer * len * inner];
                for o in 0..*outer {
                    for a in 0..*len {
                        for j in 0..*inner {
                            gx[(o * len + a) * inner + j] = g[o * inner + j];
                        }
                    }
                }
                res.push((*x, gx));
            }
            Op::BceLogits { x, target } => {
                let gx = self
                    .val(*x)
                    .iter()
                    .zip(target)
                    .zip(g)
                    .map(|((&z, &t), &gk)| gk * (sigmoid(z) - t))
                    .collect();
                res.push((*x, gx));
            }
            Op::Focal { p, labels, gamma, alpha } => {
                let gp = self
                    .val(*p)
                    .iter()
                    .zip(labels)
                    .zip(g)
                    .map(|((&pk, &y), &gk)| gk * focal_grad(pk, y, *gamma, *alpha))
                    .collect();
                res.push((*p, gp));
            }
            Op::Kl { p, q, cols, row_weight } => {
                let (pv, qv) = (self.val(*p), self.val(*q));
                let wsum: T = row_weight.iter().copied().sum();
                let scale = if wsum > T::zero() { g[0] / wsum } else { T::zero() };
                let mut gp = vec![T::zero(); pv.len()];
                let mut gq = vec![T::zero(); qv.len()];
                for (r, &w) in row_weight.iter().enumerate() {
                    if w == T::zero() {
                        continue;
                    }
                    for k in r * cols..(r + 1) * cols {
                        if pv[k] > T::zero() {
                            let qk = qv[k].max(T::min_positive_value());
                            gp[k] = scale * w * (pv[k].ln() - qk.ln() + T::one());
                            gq[k] = -scale * w * pv[k] / qk;
                        }
                    }
                }
                res.push((*p, gp));
                res.push((*q, gq));
            }
        }
        res
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// `1 − 2/(e^{2x} + 1)`: a few ulps off the library tanh near zero, much cheaper.
#[inline]
fn tanh_via_exp<T: Scalar>(x: T) -> T {
    let two = T::of(2.0);
    T::one() - two / ((two * x).exp() + T::one())
}

#[inline]
pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let inner = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    half * x * (T::one() + tanh_via_exp(inner))
}

#[inline]
fn gelu_derivative<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let th = tanh_via_exp(c * (x + a * x * x * x));
    half * (T::one() + th) + half * x * (T::one() - th * th) * c * (T::one() + T::of(3.0) * a * x * x)
}

#[inline]
fn unary_derivative<T: Scalar>(kind: Unary, x: T, y: T) -> T {
    match kind {
        Unary::Relu => {
            if x > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
        Unary::Gelu => gelu_derivative(x),
        Unary::Sigmoid => y * (T::one() - y),
        Unary::Tanh => T::one() - y * y,
        Unary::Exp => y,
        Unary::Log => T::one() / x,
    }
}

/// Probability clamp applied by the focal loss.
pub(crate) const FOCAL_EPS: f64 = 1e-7;

/// Per-sample focal loss on a probability, with `alpha = None` meaning unit class weights.
pub(crate) fn focal_value<T: Scalar>(p: T, y: T, gamma: T, alpha: Option<T>) -> T {
    let p = p.max(T::of(FOCAL_EPS)).min(T::one() - T::of(FOCAL_EPS));
    let positive = y > T::of(0.5);
    let pt = if positive { p } else { T::one() - p };
    let at = match alpha {
        Some(a) => {
            if positive {
                a
            } else {
                T::one() - a
            }
        }
        None => T::one(),
    };
    -at * (T::one() - pt).powf(gamma) * pt.ln()
}

fn focal_grad<T: Scalar>(p: T, y: T, gamma: T, alpha: Option<T>) -> T {
    let lo = T::of(FOCAL_EPS);
    let hi = T::one() - lo;
    if p < lo || p > hi {
        return T::zero();
    }
    let positive = y > T::of(0.5);
    let pt = if positive { p } else { T::one() - p };
    let at = match alpha {
        Some(a) => {
            if positive {
                a
            } else {
                T::one() - a
            }
        }
        None => T::one(),
    };
    // d/dpt of -(1-pt)^γ ln pt
    let one_m = T::one() - pt;
    let pow_term = if gamma == T::zero() { T::zero() } else { gamma * one_m.powf(gamma - T::one()) * pt.ln() };
    let d_pt = at * (pow_term - one_m.powf(gamma) / pt);
    if positive {
        d_pt
    } else {
        -d_pt
    }
}

#[inline]
pub(crate) fn gated_exp<T: Scalar>(d: T) -> T {
    d.min(T::of(60.0)).exp()
}

/// Max over gated-in entries and the normalizer `Σ g·exp(x − max)`; `None` when every gate is zero.
pub(crate) fn gated_norm<T: Scalar>(x: &[T], gate: &[T]) -> Option<(T, T)> {
    let mut max = T::neg_infinity();
    for (&xk, &gk) in x.iter().zip(gate) {
        if gk > T::zero() && xk > max {
            max = xk;
        }
    }
    if max == T::neg_infinity() {
        return None;
    }
    let z: T = x.iter().zip(gate).map(|(&xk, &gk)| if gk > T::zero() { gk * gated_exp(xk - max) } else { T::zero() }).sum();
    Some((max, z))
}

/// Calls `f(out_index, in_index)` for every element of a permuted tensor.
pub(crate) fn for_each_permuted(in_shape: &[usize], perm: &[usize], mut f: impl FnMut(usize, usize)) {
    let nd = in_shape.len();
    let mut in_strides = vec![1usize; nd];
    for d in (0..nd.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * in_shape[d + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n: usize = in_shape.iter().product();
    if n == 0 {
        return;
    }
    let mut counter = vec![0usize; nd];
    let mut in_i = 0usize;
    for out_i in 0..n {
        f(out_i, in_i);
        for d in (0..nd).rev() {
            counter[d] += 1;
            in_i += strides[d];
            if counter[d] < out_shape[d] {
                break;
            }
            in_i -= strides[d] * out_shape[d];
            counter[d] = 0;
        }
    }
}
