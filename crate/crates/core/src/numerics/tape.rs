//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] is an append-only list of nodes. Every op pushes a node that
//! owns its output value and remembers its inputs; [`Tape::backward`] walks
//! the list once in reverse, so each recorded op is visited exactly once and
//! gradients of values with fan-out accumulate by addition.
//!
//! Nodes only carry gradient bookkeeping when at least one input requires a
//! gradient, so constant sub-graphs cost nothing in the reverse pass.

use super::error::{NumericsError, Result};
use super::kernels::{self, gemm_into, BinaryOp, MatView};
use super::scalar::Scalar;
use super::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Transpose(Var),
    Binary { op: BinaryOp, a: Var, b: Var },
    Affine { a: Var, alpha: T },
    Sigmoid(Var),
    EluPlusOne(Var),
    Gelu(Var),
    ClampMin { a: Var, lo: T },
    Softmax(Var),
    CausalSoftmax(Var),
    SumAxis { a: Var, axis: usize },
    SumAll(Var),
    Concat(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceLast { a: Var, start: usize },
    SliceRows { a: Var, start: usize },
    Embedding { table: Var, ids: Vec<usize> },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<T>,
        normalizer: T,
    },
    RmsNorm { x: Var, gain: Var, eps: T },
    Rotary { a: Var, offset: usize, base: f64 },
    DivRows { a: Var, den: Var },
    MulScalar { a: Var, s: Var },
    Index { a: Var, i: usize },
    Reshape(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recorded computation for one forward pass.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by one reverse traversal, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
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

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        let op = if needs_grad { op } else { Op::Leaf };
        self.push(value, op, needs_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    /// `op(a)·op(b)` with optional transposes.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let out = kernels::matmul(self.value(a), ta, self.value(b), tb)?;
        Ok(self.derived(out, Op::MatMul { a, b, ta, tb }, &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = kernels::transpose(self.value(a))?;
        Ok(self.derived(out, Op::Transpose(a), &[a]))
    }

    fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let out = kernels::binary(op, self.value(a), self.value(b))?;
        Ok(self.derived(out, Op::Binary { op, a, b }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    /// Elementwise division; a zero anywhere in the denominator is rejected.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Div, a, b)
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        self.affine(a, factor, T::zero())
    }

    /// `alpha * a + beta` with constant scalars.
    pub fn affine(&mut self, a: Var, alpha: T, beta: T) -> Var {
        let out = kernels::map(self.value(a), |v| alpha * v + beta);
        self.derived(out, Op::Affine { a, alpha }, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = kernels::sigmoid(self.value(a));
        self.derived(out, Op::Sigmoid(a), &[a])
    }

    pub fn elu_plus_one(&mut self, a: Var) -> Var {
        let out = kernels::elu_plus_one(self.value(a));
        self.derived(out, Op::EluPlusOne(a), &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = kernels::gelu(self.value(a));
        self.derived(out, Op::Gelu(a), &[a])
    }

    pub fn clamp_min(&mut self, a: Var, lo: T) -> Var {
        let out = kernels::clamp_min(self.value(a), lo);
        self.derived(out, Op::ClampMin { a, lo }, &[a])
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let out = kernels::softmax_rows(self.value(a));
        self.derived(out, Op::Softmax(a), &[a])
    }

    pub fn causal_softmax(&mut self, a: Var) -> Result<Var> {
        let out = kernels::causal_softmax(self.value(a))?;
        Ok(self.derived(out, Op::CausalSoftmax(a), &[a]))
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out = kernels::sum_axis(self.value(a), axis)?;
        Ok(self.derived(out, Op::SumAxis { a, axis }, &[a]))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = kernels::sum_all(self.value(a));
        self.derived(out, Op::SumAll(a), &[a])
    }

    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = kernels::concat_last(&values)?;
        Ok(self.derived(out, Op::Concat(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = kernels::concat_rows(&values)?;
        Ok(self.derived(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn slice_last(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let out = kernels::slice_last(self.value(a), start, len)?;
        Ok(self.derived(out, Op::SliceLast { a, start }, &[a]))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let out = kernels::slice_rows(self.value(a), start, len)?;
        Ok(self.derived(out, Op::SliceRows { a, start }, &[a]))
    }

    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let out = kernels::embedding(self.value(table), ids)?;
        let op = Op::Embedding {
            table,
            ids: ids.to_vec(),
        };
        Ok(self.derived(out, op, &[table]))
    }

    /// Weighted next-token cross-entropy, `sum_i w_i CE_i / normalizer`.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: &[T],
        normalizer: T,
    ) -> Result<Var> {
        let out = kernels::cross_entropy(self.value(logits), targets, weights, normalizer)?;
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            weights: weights.to_vec(),
            normalizer,
        };
        Ok(self.derived(out, op, &[logits]))
    }

    pub fn rms_norm(&mut self, x: Var, gain: Var, eps: T) -> Result<Var> {
        let out = kernels::rms_norm(self.value(x), self.value(gain), eps)?;
        Ok(self.derived(out, Op::RmsNorm { x, gain, eps }, &[x, gain]))
    }

    pub fn rotary(&mut self, a: Var, offset: usize, base: f64) -> Result<Var> {
        let out = kernels::rotary(self.value(a), offset, base, false)?;
        Ok(self.derived(out, Op::Rotary { a, offset, base }, &[a]))
    }

    /// Row-wise division of `a: n×d` by `den: n×1`.
    pub fn div_rows(&mut self, a: Var, den: Var) -> Result<Var> {
        let out = kernels::div_rows(self.value(a), self.value(den))?;
        Ok(self.derived(out, Op::DivRows { a, den }, &[a, den]))
    }

    /// Multiplies `a` by the single element held in `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(super::error::mismatch(
                "mul_scalar",
                self.shape(a),
                self.shape(s),
            ));
        }
        let factor = self.value(s).item();
        let out = kernels::scale(self.value(a), factor);
        Ok(self.derived(out, Op::MulScalar { a, s }, &[a, s]))
    }

    /// Element `i` of a flat view of `a`, as a rank-0 tensor.
    pub fn index(&mut self, a: Var, i: usize) -> Result<Var> {
        let n = self.value(a).numel();
        if i >= n {
            return Err(NumericsError::OutOfRange {
                op: "index",
                index: i,
                extent: n,
            });
        }
        let out = Tensor::scalar(self.value(a).data()[i]);
        Ok(self.derived(out, Op::Index { a, i }, &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        Ok(self.derived(out, Op::Reshape(a), &[a]))
    }

    /// Gradient of a rank-0 `loss` with respect to each of `params`.
    /// Params that did not participate get exact zeros.
    pub fn grad(&self, loss: Var, params: &[Var]) -> Result<Vec<Tensor<T>>> {
        let shape = self.shape(loss);
        if !shape.is_empty() {
            return Err(NumericsError::NotScalar(shape.to_vec()));
        }
        let mut g = self.backward(vec![(loss, Tensor::scalar(T::one()))])?;
        Ok(params
            .iter()
            .map(|&p| {
                g.take(p)
                    .unwrap_or_else(|| Tensor::zeros(self.value(p).shape()))
            })
            .collect())
    }

    /// Reverse traversal seeded with upstream gradients for any set of
    /// nodes; seeds on the same node add.
    pub fn backward(&self, seeds: Vec<(Var, Tensor<T>)>) -> Result<Gradients<T>> {
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        let mut top = 0;
        for (v, seed) in seeds {
            if seed.shape() != self.shape(v) {
                return Err(super::error::mismatch(
                    "backward seed",
                    self.shape(v),
                    seed.shape(),
                ));
            }
            accumulate(&mut grads, v, seed);
            top = top.max(v.0 + 1);
        }
        for idx in (0..top).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => self.matmul_backward(*a, *b, *ta, *tb, g, grads),
            Op::Transpose(a) => {
                accumulate(grads, *a, kernels::transpose(g).expect("rank 2"));
            }
            Op::Binary { op, a, b } => self.binary_backward(*op, *a, *b, g, grads),
            Op::Affine { a, alpha } => accumulate(grads, *a, kernels::scale(g, *alpha)),
            Op::Sigmoid(a) => {
                let d = zip_map(g, out, |gi, y| gi * y * (T::one() - y));
                accumulate(grads, *a, d);
            }
            Op::EluPlusOne(a) => {
                // d/dx = 1 for x >= 0, exp(x) (= the output) below.
                let x = self.value(*a);
                let d = zip3_map(g, x, out, |gi, xi, y| {
                    if xi >= T::zero() {
                        gi
                    } else {
                        gi * y
                    }
                });
                accumulate(grads, *a, d);
            }
            Op::Gelu(a) => {
                let d = zip_map(g, self.value(*a), |gi, x| gi * kernels::gelu_grad_scalar(x));
                accumulate(grads, *a, d);
            }
            Op::ClampMin { a, lo } => {
                let d = zip_map(g, self.value(*a), |gi, x| if x >= *lo { gi } else { T::zero() });
                accumulate(grads, *a, d);
            }
            Op::Softmax(a) | Op::CausalSoftmax(a) => {
                let c = out.cols();
                let mut d = g.clone();
                for (drow, yrow) in d.data_mut().chunks_mut(c).zip(out.data().chunks(c)) {
                    let dot: T = drow.iter().zip(yrow).map(|(&gi, &y)| gi * y).sum();
                    for (gi, &y) in drow.iter_mut().zip(yrow) {
                        *gi = y * (*gi - dot);
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::SumAxis { a, axis } => {
                let shape = self.shape(*a);
                let extent = shape[*axis];
                let inner: usize = shape[axis + 1..].iter().product();
                let gd = g.data();
                let d = Tensor::from_fn(shape, |i| {
                    let o = i / (extent * inner);
                    gd[o * inner + i % inner]
                });
                accumulate(grads, *a, d);
            }
            Op::SumAll(a) => {
                accumulate(grads, *a, Tensor::full(self.shape(*a), g.item()));
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for &p in parts {
                    let len = self.value(p).cols();
                    if self.wants(p) {
                        accumulate(grads, p, kernels::slice_last(g, start, len).expect("in range"));
                    }
                    start += len;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let len = self.shape(p)[0];
                    if self.wants(p) {
                        accumulate(grads, p, kernels::slice_rows(g, start, len).expect("in range"));
                    }
                    start += len;
                }
            }
            Op::SliceLast { a, start } => {
                let buf = grad_buf(grads, *a, self.shape(*a));
                let (c, len) = (buf.cols(), g.cols());
                for (r, grow) in g.data().chunks(len).enumerate() {
                    let dst = &mut buf.data_mut()[r * c + start..r * c + start + len];
                    add_into(dst, grow);
                }
            }
            Op::SliceRows { a, start } => {
                let buf = grad_buf(grads, *a, self.shape(*a));
                let inner = buf.numel() / buf.shape()[0];
                let dst = &mut buf.data_mut()[start * inner..start * inner + g.numel()];
                add_into(dst, g.data());
            }
            Op::Embedding { table, ids } => {
                let buf = grad_buf(grads, *table, self.shape(*table));
                let d = buf.cols();
                for (r, &id) in ids.iter().enumerate() {
                    add_into(&mut buf.data_mut()[id * d..(id + 1) * d], g.row(r));
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                weights,
                normalizer,
            } => {
                let x = self.value(*logits);
                let scale = g.item() / *normalizer;
                let v = x.cols();
                let mut d = Tensor::zeros(x.shape());
                for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                    if w.is_zero() {
                        continue;
                    }
                    let row = x.row(i);
                    let lse = kernels::log_sum_exp(row);
                    let f = scale * w;
                    let drow = &mut d.data_mut()[i * v..(i + 1) * v];
                    for (dj, &xj) in drow.iter_mut().zip(row) {
                        *dj = f * (xj - lse).exp();
                    }
                    drow[t] = drow[t] - f;
                }
                accumulate(grads, *logits, d);
            }
            Op::RmsNorm { x, gain, eps } => {
                let xv = self.value(*x);
                let gv = self.value(*gain).data();
                let c = xv.cols();
                let n = T::lit(c as f64);
                let mut dx = Tensor::zeros(xv.shape());
                let mut dgain = vec![T::zero(); c];
                for ((xrow, grow), dxrow) in xv
                    .data()
                    .chunks(c)
                    .zip(g.data().chunks(c))
                    .zip(dx.data_mut().chunks_mut(c))
                {
                    let r = kernels::rms_inv(xrow, *eps);
                    let mut dot = T::zero();
                    for j in 0..c {
                        dgain[j] = dgain[j] + grow[j] * xrow[j] * r;
                        dot = dot + grow[j] * gv[j] * xrow[j];
                    }
                    let k = r * r * r * dot / n;
                    for j in 0..c {
                        dxrow[j] = r * gv[j] * grow[j] - k * xrow[j];
                    }
                }
                if self.wants(*x) {
                    accumulate(grads, *x, dx);
                }
                if self.wants(*gain) {
                    accumulate(grads, *gain, Tensor::new(&[c], dgain).expect("gain shape"));
                }
            }
            Op::Rotary { a, offset, base } => {
                let d = kernels::rotary(g, *offset, *base, true).expect("even width");
                accumulate(grads, *a, d);
            }
            Op::DivRows { a, den } => {
                let av = self.value(*a);
                let dv = self.value(*den).data();
                let c = av.cols();
                if self.wants(*a) {
                    let mut da = g.clone();
                    for (row, &q) in da.data_mut().chunks_mut(c).zip(dv) {
                        for x in row.iter_mut() {
                            *x = *x / q;
                        }
                    }
                    accumulate(grads, *a, da);
                }
                if self.wants(*den) {
                    let dd: Vec<T> = g
                        .data()
                        .chunks(c)
                        .zip(out.data().chunks(c))
                        .zip(dv)
                        .map(|((grow, orow), &q)| {
                            -grow.iter().zip(orow).map(|(&gi, &o)| gi * o).sum::<T>() / q
                        })
                        .collect();
                    let shape = self.shape(*den).to_vec();
                    accumulate(grads, *den, Tensor::new(&shape, dd).expect("den shape"));
                }
            }
            Op::MulScalar { a, s } => {
                let factor = self.value(*s).item();
                if self.wants(*a) {
                    accumulate(grads, *a, kernels::scale(g, factor));
                }
                if self.wants(*s) {
                    let dot: T = g
                        .data()
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(&gi, &x)| gi * x)
                        .sum();
                    let shape = self.shape(*s).to_vec();
                    accumulate(grads, *s, Tensor::new(&shape, vec![dot]).expect("1 elem"));
                }
            }
            Op::Index { a, i } => {
                let buf = grad_buf(grads, *a, self.shape(*a));
                buf.data_mut()[*i] = buf.data()[*i] + g.item();
            }
            Op::Reshape(a) => {
                accumulate(grads, *a, g.reshape(self.shape(*a)).expect("same numel"));
            }
        }
    }

    fn matmul_backward(
        &self,
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let av = self.value(a);
        let bv = self.value(b);
        let (ar, ac) = (av.rows(), av.cols());
        let (br, bc) = (bv.shape()[0], bv.shape()[1]);
        let (gm, gn) = (g.rows(), g.cols());
        let gview = |t: bool| MatView::new(g.data(), gm, gn, t);
        if self.wants(a) {
            let (a_shape, b_data) = (av.shape().to_vec(), bv.data());
            let buf = grad_buf(grads, a, &a_shape);
            if !ta {
                // dA = dC · op(B)^T
                gemm_into(gview(false), MatView::new(b_data, br, bc, !tb), T::one(), buf.data_mut());
            } else {
                // dA (stored k×m) = op(B) · dC^T
                gemm_into(MatView::new(b_data, br, bc, tb), gview(true), T::one(), buf.data_mut());
            }
        }
        if self.wants(b) {
            let (b_shape, a_data) = (bv.shape().to_vec(), av.data());
            let buf = grad_buf(grads, b, &b_shape);
            if !tb {
                // dB = op(A)^T · dC
                gemm_into(MatView::new(a_data, ar, ac, !ta), gview(false), T::one(), buf.data_mut());
            } else {
                // dB (stored n×k) = dC^T · op(A)
                gemm_into(gview(true), MatView::new(a_data, ar, ac, ta), T::one(), buf.data_mut());
            }
        }
    }

    fn binary_backward(
        &self,
        op: BinaryOp,
        a: Var,
        b: Var,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let av = self.value(a);
        let bv = self.value(b);
        let period = bv.numel();
        let bd = bv.data();
        let ad = av.data();
        if self.wants(a) {
            let d = match op {
                BinaryOp::Add | BinaryOp::Sub => g.clone(),
                BinaryOp::Mul => kernels::binary(BinaryOp::Mul, g, bv).expect("broadcast checked"),
                BinaryOp::Div => kernels::binary(BinaryOp::Div, g, bv).expect("broadcast checked"),
            };
            accumulate(grads, a, d);
        }
        if self.wants(b) {
            let mut d = vec![T::zero(); period];
            for (gc, ac) in g.data().chunks(period).zip(ad.chunks(period)) {
                for (j, ((dj, &gi), &x)) in d.iter_mut().zip(gc).zip(ac).enumerate() {
                    let contrib = match op {
                        BinaryOp::Add => gi,
                        BinaryOp::Sub => -gi,
                        BinaryOp::Mul => gi * x,
                        BinaryOp::Div => -gi * x / (bd[j] * bd[j]),
                    };
                    *dj = *dj + contrib;
                }
            }
            let shape = bv.shape().to_vec();
            let d = if shape.is_empty() {
                Tensor::scalar(d[0])
            } else {
                Tensor::new(&shape, d).expect("b shape")
            };
            accumulate(grads, b, d);
        }
    }
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

fn zip3_map<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    c: &Tensor<T>,
    f: impl Fn(T, T, T) -> T,
) -> Tensor<T> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .zip(c.data())
        .map(|((&x, &y), &z)| f(x, y, z))
        .collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn grad_buf<'g, T: Scalar>(
    grads: &'g mut [Option<Tensor<T>>],
    v: Var,
    shape: &[usize],
) -> &'g mut Tensor<T> {
    grads[v.0].get_or_insert_with(|| {
        if shape.is_empty() {
            Tensor::scalar(T::zero())
        } else {
            Tensor::zeros(shape)
        }
    })
}
