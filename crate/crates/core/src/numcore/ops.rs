//! Forward constructors for every differentiable operation.
//!
//! Shapes are validated eagerly; a failing op records nothing.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::tape::{
    focal_value, for_each_pair, for_each_permuted, gated_exp, gated_norm, gelu, sigmoid, Bcast, Binary, Op, Tape, Unary, Var,
};
use crate::numcore::tensor::Tensor;
use crate::scalar::Scalar;

fn shape_err<R>(msg: String) -> Result<R> {
    Err(Error::Shape(msg))
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i + a.len() >= nd { a[i + a.len() - nd] } else { 1 };
        let db = if i + b.len() >= nd { b[i + b.len() - nd] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return shape_err(format!("cannot broadcast {a:?} with {b:?}")),
        };
    }
    Ok(out)
}

fn broadcast_map(out: &[usize], operand: &[usize]) -> Bcast {
    let nd = out.len();
    let padded: Vec<usize> = std::iter::repeat_n(1, nd - operand.len()).chain(operand.iter().copied()).collect();
    if padded == out {
        return Bcast::Same;
    }
    let len: usize = operand.iter().product();
    // Suffix: the first differing dim from the left is followed only by equal dims.
    let first_eq_tail = (0..=nd).find(|&s| padded[s..] == out[s..] && padded[..s].iter().all(|&d| d == 1));
    if let Some(s) = first_eq_tail {
        if s <= nd && len == out[s..].iter().product::<usize>() {
            return Bcast::Suffix(len.max(1));
        }
    }
    let prefix = (0..=nd).find(|&s| padded[..s] == out[..s] && padded[s..].iter().all(|&d| d == 1));
    if let Some(s) = prefix {
        return Bcast::Prefix(out[s..].iter().product::<usize>().max(1));
    }
    let mut strides = vec![0usize; nd];
    let mut acc = 1;
    for d in (0..nd).rev() {
        strides[d] = if padded[d] == 1 { 0 } else { acc };
        acc *= padded[d];
    }
    let n: usize = out.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut counter = vec![0usize; nd];
    let mut idx = 0usize;
    for _ in 0..n {
        map.push(idx);
        for d in (0..nd).rev() {
            counter[d] += 1;
            idx += strides[d];
            if counter[d] < out[d] {
                break;
            }
            idx -= strides[d] * out[d];
            counter[d] = 0;
        }
    }
    Bcast::Map(map)
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Scalar> Tape<T> {
    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let out_shape = broadcast_shape(self.shape(a), self.shape(b))?;
        let ia = broadcast_map(&out_shape, self.shape(a));
        let ib = broadcast_map(&out_shape, self.shape(b));
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let n: usize = out_shape.iter().product();
        let mut data = vec![T::zero(); n];
        match kind {
            Binary::Add => for_each_pair(&ia, &ib, n, |i, ja, jb| data[i] = av[ja] + bv[jb]),
            Binary::Sub => for_each_pair(&ia, &ib, n, |i, ja, jb| data[i] = av[ja] - bv[jb]),
            Binary::Mul => for_each_pair(&ia, &ib, n, |i, ja, jb| data[i] = av[ja] * bv[jb]),
        }
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(value, Op::Binary { kind, a, b, ia, ib }, &[a, b]))
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v * c);
        self.push(value, Op::Scale(x, c), &[x])
    }

    fn unary(&mut self, x: Var, kind: Unary) -> Var {
        let f: fn(T) -> T = match kind {
            Unary::Relu => |v| v.max(T::zero()),
            Unary::Gelu => gelu,
            Unary::Sigmoid => sigmoid,
            Unary::Tanh => |v| v.tanh(),
            Unary::Exp => |v| v.exp(),
            Unary::Log => |v| v.ln(),
        };
        let value = self.value(x).map(f);
        self.push(value, Op::Unary(x, kind), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Gelu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Tanh)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Exp)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Log)
    }

    /// `a [.., s] · b [s, t]`; leading dims of `a` are treated as rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return shape_err(format!("matmul {sa:?} x {sb:?}"));
        }
        let s = sb[0];
        let t = sb[1];
        let r = sa.iter().product::<usize>() / s.max(1);
        let mut data = vec![T::zero(); r * t];
        T::gemm(r, s, t, T::one(), self.value(a).data(), s, 1, self.value(b).data(), t, 1, T::zero(), &mut data, t, 1);
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(t);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::MatMul { a, b, rows: r, inner: s, cols: t }, &[a, b]))
    }

    /// Batched product of `[B, r, s]` with `[B, s, t]`, or with `[B, t, s]` transposed when `trans_b`.
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return shape_err(format!("batch_matmul {sa:?} x {sb:?}"));
        }
        let (batch, r, s) = (sa[0], sa[1], sa[2]);
        let (bs, t) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if bs != s {
            return shape_err(format!("batch_matmul inner mismatch {sa:?} x {sb:?} (trans_b={trans_b})"));
        }
        let mut data = vec![T::zero(); batch * r * t];
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        for n in 0..batch {
            let am = &av[n * r * s..(n + 1) * r * s];
            let bm = &bv[n * s * t..(n + 1) * s * t];
            let cm = &mut data[n * r * t..(n + 1) * r * t];
            if trans_b {
                T::gemm(r, s, t, T::one(), am, s, 1, bm, 1, s, T::zero(), cm, t, 1);
            } else {
                T::gemm(r, s, t, T::one(), am, s, 1, bm, t, 1, T::zero(), cm, t, 1);
            }
        }
        let value = Tensor::new(vec![batch, r, t], data)?;
        Ok(self.push(value, Op::BatchMatMul { a, b, batch, rows: r, inner: s, cols: t, trans_b }, &[a, b]))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let in_shape = self.shape(x).to_vec();
        let mut seen = vec![false; in_shape.len()];
        if perm.len() != in_shape.len() || perm.iter().any(|&p| p >= in_shape.len() || std::mem::replace(&mut seen[p], true)) {
            return shape_err(format!("invalid permutation {perm:?} for {in_shape:?}"));
        }
        let src = self.value(x).data();
        let mut data = vec![T::zero(); src.len()];
        for_each_permuted(&in_shape, perm, |o, i| data[o] = src[i]);
        let value = Tensor::new(perm.iter().map(|&p| in_shape[p]).collect(), data)?;
        Ok(self.push(value, Op::Permute { x, perm: perm.to_vec() }, &[x]))
    }

    /// Swaps the last two dims.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let nd = self.shape(x).len();
        if nd < 2 {
            return shape_err(format!("transpose needs rank >= 2, got {:?}", self.shape(x)));
        }
        let mut perm: Vec<usize> = (0..nd).collect();
        perm.swap(nd - 1, nd - 2);
        self.permute(x, &perm)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// Softmax along `axis`, stabilized by max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return shape_err(format!("softmax axis {axis} out of range for {shape:?}"));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut data = vec![T::zero(); src.len()];
        for o in 0..outer {
            for j in 0..inner {
                let base = o * len * inner + j;
                let max = (0..len).map(|a| src[base + a * inner]).fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for a in 0..len {
                    let e = (src[base + a * inner] - max).exp();
                    data[base + a * inner] = e;
                    z += e;
                }
                for a in 0..len {
                    data[base + a * inner] /= z;
                }
            }
        }
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Softmax { x, outer, len, inner }, &[x]))
    }

    /// Softmax over the last axis of `x [M·G, R, C]` where each key `k` is weighted by
    /// `gate[m, k] >= 0`: `y_k = g_k·exp(x_k) / Σ g·exp(x)`. Rows of the `m`-th block of
    /// `G·R` rows use gate row `m`. A zero gate removes the key exactly; rows whose gates
    /// are all zero come out as zeros.
    pub fn gated_softmax(&mut self, x: Var, gate: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let gs = self.shape(gate).to_vec();
        if xs.len() != 3 || gs.len() != 2 || gs[1] != xs[2] || gs[0] == 0 || xs[0] % gs[0] != 0 {
            return shape_err(format!("gated_softmax scores {xs:?} with gate {gs:?}"));
        }
        let (rows, cols) = (xs[1], xs[2]);
        let groups = xs[0] / gs[0];
        let (xv, gv) = (self.value(x).data(), self.value(gate).data());
        let mut data = vec![T::zero(); xv.len()];
        for (row, (xr, yr)) in xv.chunks(cols).zip(data.chunks_mut(cols)).enumerate() {
            let m = row / (rows * groups);
            let gr = &gv[m * cols..(m + 1) * cols];
            if let Some((max, z)) = gated_norm(xr, gr) {
                for k in 0..cols {
                    if gr[k] > T::zero() {
                        yr[k] = gr[k] * gated_exp(xr[k] - max) / z;
                    }
                }
            }
        }
        let value = Tensor::new(xs, data)?;
        Ok(self.push(value, Op::GatedSoftmax { x, gate, rows, cols, groups }, &[x, gate]))
    }

    /// Layer normalization over the last axis with affine `gain`/`bias` of that extent.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let d = *xs.last().ok_or_else(|| Error::Shape("layer_norm on a scalar".into()))?;
        if d == 0 || self.shape(gain) != [d] || self.shape(bias) != [d] {
            return shape_err(format!("layer_norm {xs:?} with gain {:?} bias {:?}", self.shape(gain), self.shape(bias)));
        }
        let eps = T::of(eps);
        let inv_d = T::one() / T::of(d as f64);
        let (xv, gv, bv) = (self.value(x).data(), self.value(gain).data(), self.value(bias).data());
        let rows = xv.len() / d;
        let mut data = vec![T::zero(); xv.len()];
        let mut mean = Vec::with_capacity(rows);
        let mut rstd = Vec::with_capacity(rows);
        for (xr, yr) in xv.chunks(d).zip(data.chunks_mut(d)) {
            let mu = xr.iter().copied().sum::<T>() * inv_d;
            let var = xr.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() * inv_d;
            let rs = T::one() / (var + eps).sqrt();
            for k in 0..d {
                yr[k] = (xr[k] - mu) * rs * gv[k] + bv[k];
            }
            mean.push(mu);
            rstd.push(rs);
        }
        let value = Tensor::new(xs, data)?;
        Ok(self.push(value, Op::LayerNorm { x, gain, bias, mean, rstd }, &[x, gain, bias]))
    }

    /// Inverted dropout. Identity when not training or `rate == 0`.
    pub fn dropout(&mut self, x: Var, rate: f64, training: bool, rng: &mut impl Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate must lie in [0, 1), got {rate}")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let scale: Vec<T> =
            (0..self.value(x).numel()).map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep }).collect();
        let src = self.value(x);
        let data = src.data().iter().zip(&scale).map(|(&v, &s)| v * s).collect();
        let value = Tensor::new(src.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Dropout { x, scale }, &[x]))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*inputs.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?).to_vec();
        if axis >= first.len() {
            return shape_err(format!("concat axis {axis} out of range for {first:?}"));
        }
        let mut parts = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != first.len() || s.iter().zip(&first).enumerate().any(|(d, (a, b))| d != axis && a != b) {
                return shape_err(format!("concat {first:?} with {s:?} along {axis}"));
            }
            parts.push((v, s[axis]));
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let total: usize = parts.iter().map(|p| p.1).sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &(v, extent) in &parts {
                let chunk = extent * inner;
                data.extend_from_slice(&self.value(v).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let value = Tensor::new(shape, data)?;
        let vars: Vec<Var> = parts.iter().map(|p| p.0).collect();
        Ok(self.push(value, Op::Concat { inputs: parts, outer, inner }, &vars))
    }

    /// `x[.., start..end, ..]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start > end || end > shape[axis] {
            return shape_err(format!("slice {start}..{end} on axis {axis} of {shape:?}"));
        }
        let (outer, in_extent, inner) = split_axis(&shape, axis);
        let len = end - start;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = o * in_extent * inner + start * inner;
            data.extend_from_slice(&src[from..from + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(value, Op::Slice { x, outer, inner, in_extent, start, len }, &[x]))
    }

    /// Rows `table[idx[i]]` (embedding lookup along axis 0).
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.is_empty() || idx.iter().any(|&i| i >= shape[0]) {
            return shape_err(format!("gather index out of range for {shape:?}"));
        }
        let row: usize = shape[1..].iter().product();
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(idx.len() * row);
        for &i in idx {
            data.extend_from_slice(&src[i * row..(i + 1) * row]);
        }
        let mut out_shape = shape;
        out_shape[0] = idx.len();
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(value, Op::Gather { table, idx: idx.to_vec(), row }, &[table]))
    }

    /// Zeros of `total` rows with row `idx[i]` set to `src[i]` (duplicates accumulate).
    pub fn scatter_rows(&mut self, src: Var, idx: &[usize], total: usize) -> Result<Var> {
        let shape = self.shape(src).to_vec();
        if shape.is_empty() || shape[0] != idx.len() || idx.iter().any(|&i| i >= total) {
            return shape_err(format!("scatter of {shape:?} into {total} rows"));
        }
        let row: usize = shape[1..].iter().product();
        let sv = self.value(src).data();
        let mut data = vec![T::zero(); total * row];
        for (k, &dst) in idx.iter().enumerate() {
            data[dst * row..(dst + 1) * row].iter_mut().zip(&sv[k * row..(k + 1) * row]).for_each(|(a, &b)| *a += b);
        }
        let mut out_shape = shape;
        out_shape[0] = total;
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(value, Op::Scatter { src, idx: idx.to_vec(), row }, &[src]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x).data();
        let m = v.iter().copied().sum::<T>() / T::of(v.len().max(1) as f64);
        self.push(Tensor::scalar(m), Op::Mean(x), &[x])
    }

    /// Sum along `axis`, dropping it.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return shape_err(format!("sum axis {axis} out of range for {shape:?}"));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for a in 0..len {
                for j in 0..inner {
                    data[o * inner + j] += src[(o * len + a) * inner + j];
                }
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(value, Op::SumAxis { x, outer, len, inner }, &[x]))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let len = *self.shape(x).get(axis).ok_or_else(|| Error::Shape(format!("mean axis {axis}")))?;
        let s = self.sum_axis(x, axis)?;
        Ok(self.scale(s, T::one() / T::of(len.max(1) as f64)))
    }

    /// Elementwise binary cross-entropy on logits against constant targets in `[0, 1]`.
    pub fn bce_with_logits(&mut self, x: Var, target: &[T]) -> Result<Var> {
        let xv = self.value(x);
        if xv.numel() != target.len() {
            return shape_err(format!("bce targets {} for logits {:?}", target.len(), xv.shape()));
        }
        let data = xv
            .data()
            .iter()
            .zip(target)
            .map(|(&z, &t)| z.max(T::zero()) - z * t + (T::one() + (-z.abs()).exp()).ln())
            .collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(value, Op::BceLogits { x, target: target.to_vec() }, &[x]))
    }

    /// Elementwise focal loss of probabilities `p` against labels in `{0, 1}`.
    /// `alpha = None` gives both classes unit weight.
    pub fn focal(&mut self, p: Var, labels: &[T], gamma: T, alpha: Option<T>) -> Result<Var> {
        let pv = self.value(p);
        if pv.numel() != labels.len() {
            return shape_err(format!("focal labels {} for probabilities {:?}", labels.len(), pv.shape()));
        }
        let data = pv.data().iter().zip(labels).map(|(&pk, &y)| focal_value(pk, y, gamma, alpha)).collect();
        let value = Tensor::new(pv.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Focal { p, labels: labels.to_vec(), gamma, alpha }, &[p]))
    }

    /// Weighted mean over rows of `KL(p_row ‖ q_row)`, rows being the last axis.
    /// Entries where `p` is zero contribute nothing.
    pub fn kl_rows(&mut self, p: Var, q: Var, row_weight: &[T]) -> Result<Var> {
        let (ps, qs) = (self.shape(p).to_vec(), self.shape(q).to_vec());
        let cols = *ps.last().unwrap_or(&0);
        if ps != qs || cols == 0 || self.value(p).numel() / cols != row_weight.len() {
            return shape_err(format!("kl_rows {ps:?} vs {qs:?} with {} row weights", row_weight.len()));
        }
        let (pv, qv) = (self.value(p).data(), self.value(q).data());
        let mut total = T::zero();
        let mut wsum = T::zero();
        for (r, &w) in row_weight.iter().enumerate() {
            if w == T::zero() {
                continue;
            }
            wsum += w;
            let mut kl = T::zero();
            for k in r * cols..(r + 1) * cols {
                if pv[k] > T::zero() {
                    kl += pv[k] * (pv[k].ln() - qv[k].max(T::min_positive_value()).ln());
                }
            }
            total += w * kl;
        }
        let value = if wsum > T::zero() { total / wsum } else { T::zero() };
        Ok(self.push(Tensor::scalar(value), Op::Kl { p, q, cols, row_weight: row_weight.to_vec() }, &[p, q]))
    }
}
