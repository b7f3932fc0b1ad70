//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node holding its forward value and enough
//! context to run its vector-Jacobian product. Nodes are appended in
//! evaluation order, so walking the tape backwards is a valid topological
//! order. Gradients into a node that is used more than once accumulate
//! additively.

use crate::error::{GlamError, Result};
use crate::scalar::Scalar;

use super::tensor::{axis_split, matmul_at_into, matmul_bt_into, matmul_into, numel, softmax_strided, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Geometry of a fused causal attention call over `[batch·seq × heads·d_head]`
/// activations.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionGeometry {
    pub batch: usize,
    pub seq: usize,
    pub heads: usize,
    pub d_head: usize,
    /// Bias bucket for each causal distance `0..seq`.
    pub bucket_of_distance: Vec<usize>,
    pub buckets: usize,
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    MulConst(Var, Vec<T>),
    Gelu(Var),
    Softmax { x: Var, axis: usize },
    RmsNorm { x: Var, gain: Var, inv_rms: Vec<T> },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Vec<T>, count: usize },
    GatherRows { table: Var, rows: Vec<usize> },
    ScatterAddRows { src: Var, rows: Vec<usize> },
    MulRows(Var, Var),
    Gather { x: Var, index: Vec<usize> },
    Sum(Var),
    MeanRows(Var),
    Reshape(Var),
    Attention { q: Var, k: Var, v: Var, bias: Var, geom: AttentionGeometry, probs: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one scalar with respect to every node reached by backward.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor; zeros when the loss does not depend on `v`.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        let shape = &self.shapes[v.0];
        match self.get(v) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor<T> {
        let shape = self.shapes[v.0].clone();
        match self.grads[v.0].take() {
            Some(g) => Tensor::new(&shape, g).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }
}

fn mismatch<T>(op: &'static str, a: &[usize], b: &[usize]) -> Result<T> {
    Err(GlamError::Shape { op, lhs: a.to_vec(), rhs: b.to_vec() })
}

fn gelu_scalar<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    half * x * (T::one() + (x * T::FRAC_1_SQRT_2()).erf())
}

fn gelu_derivative<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let cdf = half * (T::one() + (x * T::FRAC_1_SQRT_2()).erf());
    let pdf = (-(x * x) * half).exp() / (T::of(2.0) * T::PI()).sqrt();
    cdf + x * pdf
}

/// Exact erf-form GELU, `x·Φ(x)`.
pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(gelu_scalar)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn scalar(&mut self, x: T) -> Var {
        self.leaf(Tensor::scalar(x))
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(v);
        match s {
            &[r, c] => Ok((r, c)),
            _ => mismatch(op, s, &[0, 0]),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.dims2(a, "matmul")?;
        let (k2, m) = self.dims2(b, "matmul")?;
        if k != k2 {
            return mismatch("matmul", self.shape(a), self.shape(b));
        }
        let mut out = vec![T::zero(); n * m];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, n, k, m);
        Ok(self.push(Tensor::new(&[n, m], out)?, Op::MatMul(a, b)))
    }

    /// `a · bᵀ` for `a: [n×m]`, `b: [k×m]`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, m) = self.dims2(a, "matmul_bt")?;
        let (k, m2) = self.dims2(b, "matmul_bt")?;
        if m != m2 {
            return mismatch("matmul_bt", self.shape(a), self.shape(b));
        }
        let mut out = vec![T::zero(); n * k];
        matmul_bt_into(self.value(a).data(), self.value(b).data(), &mut out, n, m, k);
        Ok(self.push(Tensor::new(&[n, k], out)?, Op::MatMulBt(a, b)))
    }

    fn zip(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        if self.shape(a) != self.shape(b) {
            return mismatch(name, self.shape(a), self.shape(b));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(self.shape(a), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "div", |x, y| x / y)?;
        Ok(self.push(t, Op::Div(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let t = self.value(a).map(|x| x * c);
        self.push(t, Op::Scale(a, c))
    }

    /// Elementwise product with a constant (non-differentiated) tensor.
    pub fn mul_const(&mut self, a: Var, c: &Tensor<T>) -> Result<Var> {
        if self.shape(a) != c.shape() {
            return mismatch("mul_const", self.shape(a), c.shape());
        }
        let data = self.value(a).data().iter().zip(c.data()).map(|(&x, &y)| x * y).collect();
        let t = Tensor::new(self.shape(a), data)?;
        Ok(self.push(t, Op::MulConst(a, c.data().to_vec())))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let t = gelu(self.value(a));
        self.push(t, Op::Gelu(a))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x).softmax(axis)?;
        Ok(self.push(t, Op::Softmax { x, axis }))
    }

    /// Root-mean-square normalization over the last axis with a learned gain.
    pub fn rms_norm(&mut self, x: Var, gain: Var, eps: T) -> Result<Var> {
        let (n, m) = self.dims2(x, "rms_norm")?;
        if self.shape(gain) != [m] {
            return mismatch("rms_norm", self.shape(x), self.shape(gain));
        }
        let xs = self.value(x).data();
        let g = self.value(gain).data();
        let mut out = vec![T::zero(); n * m];
        let mut inv_rms = Vec::with_capacity(n);
        let mf = T::of(m as f64);
        for i in 0..n {
            let row = &xs[i * m..(i + 1) * m];
            let ms = row.iter().map(|&v| v * v).sum::<T>() / mf;
            let r = T::one() / (ms + eps).sqrt();
            inv_rms.push(r);
            for j in 0..m {
                out[i * m + j] = row[j] * r * g[j];
            }
        }
        let t = Tensor::new(&[n, m], out)?;
        Ok(self.push(t, Op::RmsNorm { x, gain, inv_rms }))
    }

    /// Mean negative log-likelihood over positions whose target is `Some`.
    /// `logits` has the vocabulary as its last axis.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        let vocab = *shape.last().unwrap_or(&0);
        let rows = if vocab == 0 { 0 } else { numel(&shape) / vocab };
        if rows != targets.len() {
            return mismatch("cross_entropy", &shape, &[targets.len()]);
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut total = T::zero();
        let mut count = 0usize;
        for (i, t) in targets.iter().enumerate() {
            softmax_strided(&mut probs, i * vocab, vocab, 1);
            if let Some(t) = *t {
                if t >= vocab {
                    return Err(GlamError::Range { what: "target id", value: t, limit: vocab });
                }
                // log-sum-exp form keeps near-one-hot targets accurate
                let row = &self.value(logits).data()[i * vocab..(i + 1) * vocab];
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
                total += lse - row[t];
                count += 1;
            }
        }
        let loss = if count == 0 { T::zero() } else { total / T::of(count as f64) };
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, targets: targets.to_vec(), probs, count }))
    }

    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let (n, m) = self.dims2(table, "gather_rows")?;
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(rows.len() * m);
        for &r in rows {
            if r >= n {
                return Err(GlamError::Range { what: "row", value: r, limit: n });
            }
            out.extend_from_slice(&src[r * m..(r + 1) * m]);
        }
        let t = Tensor::new(&[rows.len(), m], out)?;
        Ok(self.push(t, Op::GatherRows { table, rows: rows.to_vec() }))
    }

    /// `out[rows[i]] += src[i]` into a zero `[n_rows × m]` tensor.
    pub fn scatter_add_rows(&mut self, src: Var, rows: &[usize], n_rows: usize) -> Result<Var> {
        let (k, m) = self.dims2(src, "scatter_add_rows")?;
        if k != rows.len() {
            return mismatch("scatter_add_rows", self.shape(src), &[rows.len()]);
        }
        let s = self.value(src).data();
        let mut out = vec![T::zero(); n_rows * m];
        for (i, &r) in rows.iter().enumerate() {
            if r >= n_rows {
                return Err(GlamError::Range { what: "row", value: r, limit: n_rows });
            }
            for j in 0..m {
                out[r * m + j] += s[i * m + j];
            }
        }
        let t = Tensor::new(&[n_rows, m], out)?;
        Ok(self.push(t, Op::ScatterAddRows { src, rows: rows.to_vec() }))
    }

    /// Scales row `i` of `x: [n×m]` by `w[i]`.
    pub fn mul_rows(&mut self, x: Var, w: Var) -> Result<Var> {
        let (n, m) = self.dims2(x, "mul_rows")?;
        if self.shape(w) != [n] {
            return mismatch("mul_rows", self.shape(x), self.shape(w));
        }
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let data = (0..n * m).map(|i| xs[i] * ws[i / m]).collect();
        let t = Tensor::new(&[n, m], data)?;
        Ok(self.push(t, Op::MulRows(x, w)))
    }

    /// Flat gather: `out[i] = x.data[index[i]]`.
    pub fn gather(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(index.len());
        for &i in index {
            if i >= src.len() {
                return Err(GlamError::Range { what: "flat index", value: i, limit: src.len() });
            }
            out.push(src[i]);
        }
        let t = Tensor::new(&[index.len()], out)?;
        Ok(self.push(t, Op::Gather { x, index: index.to_vec() }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let t = Tensor::scalar(self.value(x).sum());
        self.push(t, Op::Sum(x))
    }

    /// Column means of `x: [n×m]`, giving `[m]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (n, m) = self.dims2(x, "mean_rows")?;
        let xs = self.value(x).data();
        let mut out = vec![T::zero(); m];
        for i in 0..n {
            for j in 0..m {
                out[j] += xs[i * m + j];
            }
        }
        let inv = T::one() / T::of(n as f64);
        out.iter_mut().for_each(|v| *v *= inv);
        let t = Tensor::new(&[m], out)?;
        Ok(self.push(t, Op::MeanRows(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    /// Fused causal multi-head attention with an additive learned bias per
    /// (head, distance bucket). `q`, `k`, `v` are `[batch·seq × heads·d_head]`;
    /// `bias` is `[heads × buckets]`.
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, bias: Var, geom: AttentionGeometry) -> Result<Var> {
        let rows = geom.batch * geom.seq;
        let width = geom.heads * geom.d_head;
        for x in [q, k, v] {
            if self.shape(x) != [rows, width] {
                return mismatch("attention", self.shape(x), &[rows, width]);
            }
        }
        if self.shape(bias) != [geom.heads, geom.buckets] {
            return mismatch("attention bias", self.shape(bias), &[geom.heads, geom.buckets]);
        }
        if geom.bucket_of_distance.len() < geom.seq || geom.bucket_of_distance.iter().any(|&b| b >= geom.buckets) {
            return Err(GlamError::config("attention bucket table does not cover the sequence"));
        }
        let (out, probs) = attention_forward(
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            self.value(bias).data(),
            &geom,
        );
        let t = Tensor::new(&[rows, width], out)?;
        Ok(self.push(t, Op::Attention { q, k, v, bias, geom, probs }))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).len(), 1, "backward requires a scalar output");
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<T>>> = vec![None; n];
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            // Interior gradients are not kept; only leaves are reported.
        }

        Gradients { grads, shapes: self.nodes[..n].iter().map(|n| n.value.shape().to_vec()).collect() }
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            let len = self.nodes[v.0].value.len();
            let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); len]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = self.nodes[a.0].value.dims2().expect("rank 2");
                let m = node.value.shape()[1];
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                // dA = G · Bᵀ, dB = Aᵀ · G
                acc(*a, &mut |buf| matmul_bt_into(g, bv, buf, n, m, k));
                acc(*b, &mut |buf| matmul_at_into(av, g, buf, n, k, m));
            }
            Op::MatMulBt(a, b) => {
                let (n, m) = self.nodes[a.0].value.dims2().expect("rank 2");
                let k = node.value.shape()[1];
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                // out = A·Bᵀ: dA = G·B, dB = Gᵀ·A
                acc(*a, &mut |buf| matmul_into(g, bv, buf, n, k, m));
                acc(*b, &mut |buf| matmul_at_into(g, av, buf, n, k, m));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |buf| add_into(buf, g));
                acc(*b, &mut |buf| add_into(buf, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |buf| add_into(buf, g));
                acc(*b, &mut |buf| buf.iter_mut().zip(g).for_each(|(o, &d)| *o -= d));
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                acc(*a, &mut |buf| {
                    for j in 0..buf.len() {
                        buf[j] += g[j] * bv[j];
                    }
                });
                acc(*b, &mut |buf| {
                    for j in 0..buf.len() {
                        buf[j] += g[j] * av[j];
                    }
                });
            }
            Op::Div(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                acc(*a, &mut |buf| {
                    for j in 0..buf.len() {
                        buf[j] += g[j] / bv[j];
                    }
                });
                acc(*b, &mut |buf| {
                    for j in 0..buf.len() {
                        buf[j] -= g[j] * av[j] / (bv[j] * bv[j]);
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |buf| buf.iter_mut().zip(g).for_each(|(o, &d)| *o += d * *c)),
            Op::MulConst(a, c) => acc(*a, &mut |buf| {
                for j in 0..buf.len() {
                    buf[j] += g[j] * c[j];
                }
            }),
            Op::Gelu(a) => {
                let av = self.value(*a).data();
                acc(*a, &mut |buf| {
                    for j in 0..buf.len() {
                        buf[j] += g[j] * gelu_derivative(av[j]);
                    }
                });
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = axis_split(node.value.shape(), *axis).expect("axis");
                acc(*x, &mut |buf| {
                    for o in 0..outer {
                        for s in 0..inner {
                            let base = o * len * inner + s;
                            let mut dot = T::zero();
                            for j in 0..len {
                                let p = base + j * inner;
                                dot += g[p] * y[p];
                            }
                            for j in 0..len {
                                let p = base + j * inner;
                                buf[p] += y[p] * (g[p] - dot);
                            }
                        }
                    }
                });
            }
            Op::RmsNorm { x, gain, inv_rms } => {
                let (n, m) = node.value.dims2().expect("rank 2");
                let xs = self.value(*x).data();
                let gs = self.value(*gain).data();
                let mf = T::of(m as f64);
                acc(*gain, &mut |buf| {
                    for i in 0..n {
                        for j in 0..m {
                            buf[j] += g[i * m + j] * xs[i * m + j] * inv_rms[i];
                        }
                    }
                });
                acc(*x, &mut |buf| {
                    for i in 0..n {
                        let r = inv_rms[i];
                        let mut dot = T::zero();
                        for j in 0..m {
                            dot += g[i * m + j] * gs[j] * xs[i * m + j];
                        }
                        let coef = dot * r * r * r / mf;
                        for j in 0..m {
                            buf[i * m + j] += g[i * m + j] * gs[j] * r - xs[i * m + j] * coef;
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, targets, probs, count } => {
                if *count == 0 {
                    return;
                }
                let vocab = probs.len() / targets.len();
                let scale = g[0] / T::of(*count as f64);
                acc(*logits, &mut |buf| {
                    for (i, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        for j in 0..vocab {
                            buf[i * vocab + j] += probs[i * vocab + j] * scale;
                        }
                        buf[i * vocab + t] -= scale;
                    }
                });
            }
            Op::GatherRows { table, rows } => {
                let m = node.value.shape()[1];
                acc(*table, &mut |buf| {
                    for (i, &r) in rows.iter().enumerate() {
                        add_into(&mut buf[r * m..(r + 1) * m], &g[i * m..(i + 1) * m]);
                    }
                });
            }
            Op::ScatterAddRows { src, rows } => {
                let m = node.value.shape()[1];
                acc(*src, &mut |buf| {
                    for (i, &r) in rows.iter().enumerate() {
                        add_into(&mut buf[i * m..(i + 1) * m], &g[r * m..(r + 1) * m]);
                    }
                });
            }
            Op::MulRows(x, w) => {
                let m = node.value.shape()[1];
                let xs = self.value(*x).data();
                let ws = self.value(*w).data();
                acc(*x, &mut |buf| {
                    for j in 0..buf.len() {
                        buf[j] += g[j] * ws[j / m];
                    }
                });
                acc(*w, &mut |buf| {
                    for (i, b) in buf.iter_mut().enumerate() {
                        for j in 0..m {
                            *b += g[i * m + j] * xs[i * m + j];
                        }
                    }
                });
            }
            Op::Gather { x, index } => acc(*x, &mut |buf| {
                for (k, &i) in index.iter().enumerate() {
                    buf[i] += g[k];
                }
            }),
            Op::Sum(x) => acc(*x, &mut |buf| buf.iter_mut().for_each(|o| *o += g[0])),
            Op::MeanRows(x) => {
                let (n, m) = self.nodes[x.0].value.dims2().expect("rank 2");
                let inv = T::one() / T::of(n as f64);
                acc(*x, &mut |buf| {
                    for i in 0..n {
                        for j in 0..m {
                            buf[i * m + j] += g[j] * inv;
                        }
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &mut |buf| add_into(buf, g)),
            Op::Attention { q, k, v, bias, geom, probs } => {
                let (dq, dk, dv, db) = attention_backward(
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                    probs,
                    g,
                    geom,
                );
                acc(*q, &mut |buf| add_into(buf, &dq));
                acc(*k, &mut |buf| add_into(buf, &dk));
                acc(*v, &mut |buf| add_into(buf, &dv));
                acc(*bias, &mut |buf| add_into(buf, &db));
            }
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(o, &s)| *o += s);
}

/// Returns the attended values and the attention probabilities
/// `[batch, heads, seq, seq]` (zero above the diagonal).
pub(crate) fn attention_forward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    bias: &[T],
    geom: &AttentionGeometry,
) -> (Vec<T>, Vec<T>) {
    let AttentionGeometry { batch, seq, heads, d_head, buckets, .. } = *geom;
    let width = heads * d_head;
    let scale = T::one() / T::of(d_head as f64).sqrt();
    let mut out = vec![T::zero(); batch * seq * width];
    let mut probs = vec![T::zero(); batch * heads * seq * seq];
    for b in 0..batch {
        for h in 0..heads {
            let col = h * d_head;
            for i in 0..seq {
                let qi = &q[(b * seq + i) * width + col..][..d_head];
                let prow = &mut probs[((b * heads + h) * seq + i) * seq..][..seq];
                for j in 0..=i {
                    let kj = &k[(b * seq + j) * width + col..][..d_head];
                    let dot: T = qi.iter().zip(kj).map(|(&x, &y)| x * y).sum();
                    prow[j] = dot * scale + bias[h * buckets + geom.bucket_of_distance[i - j]];
                }
                softmax_strided(&mut prow[..=i], 0, i + 1, 1);
                let orow = &mut out[(b * seq + i) * width + col..][..d_head];
                for j in 0..=i {
                    let p = prow[j];
                    let vj = &v[(b * seq + j) * width + col..][..d_head];
                    orow.iter_mut().zip(vj).for_each(|(o, &x)| *o += p * x);
                }
            }
        }
    }
    (out, probs)
}

fn attention_backward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    dout: &[T],
    geom: &AttentionGeometry,
) -> (Vec<T>, Vec<T>, Vec<T>, Vec<T>) {
    let AttentionGeometry { batch, seq, heads, d_head, buckets, .. } = *geom;
    let width = heads * d_head;
    let scale = T::one() / T::of(d_head as f64).sqrt();
    let mut dq = vec![T::zero(); q.len()];
    let mut dk = vec![T::zero(); k.len()];
    let mut dv = vec![T::zero(); v.len()];
    let mut db = vec![T::zero(); heads * buckets];
    let mut dp = vec![T::zero(); seq];
    for b in 0..batch {
        for h in 0..heads {
            let col = h * d_head;
            for i in 0..seq {
                let prow = &probs[((b * heads + h) * seq + i) * seq..][..seq];
                let gi = &dout[(b * seq + i) * width + col..][..d_head];
                let mut weighted = T::zero();
                for j in 0..=i {
                    let vj = &v[(b * seq + j) * width + col..][..d_head];
                    dp[j] = gi.iter().zip(vj).map(|(&x, &y)| x * y).sum();
                    weighted += prow[j] * dp[j];
                    let dvj = &mut dv[(b * seq + j) * width + col..][..d_head];
                    dvj.iter_mut().zip(gi).for_each(|(o, &x)| *o += prow[j] * x);
                }
                for j in 0..=i {
                    let ds = prow[j] * (dp[j] - weighted);
                    db[h * buckets + geom.bucket_of_distance[i - j]] += ds;
                    let dsc = ds * scale;
                    let qi = (b * seq + i) * width + col;
                    let kj = (b * seq + j) * width + col;
                    for d in 0..d_head {
                        dq[qi + d] += dsc * k[kj + d];
                        dk[kj + d] += dsc * q[qi + d];
                    }
                }
            }
        }
    }
    (dq, dk, dv, db)
}
