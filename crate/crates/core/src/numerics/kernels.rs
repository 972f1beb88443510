//! Forward kernels on [`Tensor`]. Reverse rules live in [`super::tape`].
//!
//! Matrices are the last two axes; leading axes of the left operand of a
//! matmul are flattened into rows. Binary elementwise ops broadcast the
//! right operand over leading axes only (its shape must be a suffix of the
//! left shape).

use std::cell::RefCell;
use std::collections::HashMap;

use super::error::{mismatch, NumericsError, Result};
use super::scalar::Scalar;
use super::tensor::Tensor;

/// A row-major matrix buffer seen either as stored or transposed.
#[derive(Clone, Copy)]
pub(crate) struct MatView<'a, T> {
    pub data: &'a [T],
    /// Stored row count.
    pub rows: usize,
    /// Stored column count.
    pub cols: usize,
    pub transposed: bool,
}

impl<'a, T> MatView<'a, T> {
    pub fn new(data: &'a [T], rows: usize, cols: usize, transposed: bool) -> Self {
        Self {
            data,
            rows,
            cols,
            transposed,
        }
    }

    fn logical(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `out (m×n, row-major) <- a·b + beta·out`.
pub(crate) fn gemm_into<T: Scalar>(a: MatView<'_, T>, b: MatView<'_, T>, beta: T, out: &mut [T]) {
    let (m, k) = a.logical();
    let (k2, n) = b.logical();
    assert_eq!(k, k2, "gemm inner dimension");
    assert_eq!(a.data.len(), a.rows * a.cols);
    assert_eq!(b.data.len(), b.rows * b.cols);
    assert_eq!(out.len(), m * n);
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    if k == 0 {
        for v in out.iter_mut() {
            *v = *v * beta;
        }
        return;
    }
    T::gemm(
        m,
        k,
        n,
        T::one(),
        a.data,
        rsa,
        csa,
        b.data,
        rsb,
        csb,
        beta,
        out,
        n as isize,
        1,
    );
}

fn matrix_dims<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize)> {
    if t.rank() < 2 {
        return Err(NumericsError::Invalid(format!(
            "{op}: expected a matrix, got shape {:?}",
            t.shape()
        )));
    }
    Ok((t.rows(), t.cols()))
}

/// `op(a)·op(b)` where `op` optionally transposes. A transposed left operand
/// must be rank 2; an untransposed one may carry leading axes.
pub fn matmul<T: Scalar>(
    a: &Tensor<T>,
    trans_a: bool,
    b: &Tensor<T>,
    trans_b: bool,
) -> Result<Tensor<T>> {
    let (ar, ac) = matrix_dims(a, "matmul")?;
    if b.rank() != 2 || (trans_a && a.rank() != 2) {
        return Err(mismatch("matmul", a.shape(), b.shape()));
    }
    let (br, bc) = (b.shape()[0], b.shape()[1]);
    let (m, k) = if trans_a { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if trans_b { (bc, br) } else { (br, bc) };
    if k != k2 {
        return Err(mismatch("matmul", a.shape(), b.shape()));
    }
    let mut out = vec![T::zero(); m * n];
    gemm_into(
        MatView::new(a.data(), ar, ac, trans_a),
        MatView::new(b.data(), br, bc, trans_b),
        T::zero(),
        &mut out,
    );
    let mut shape = if trans_a {
        vec![m]
    } else {
        a.shape()[..a.rank() - 1].to_vec()
    };
    shape.push(n);
    Tensor::new(&shape, out)
}

pub fn transpose<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 {
        return Err(NumericsError::Invalid(format!(
            "transpose: expected rank 2, got {:?}",
            a.shape()
        )));
    }
    let (r, c) = (a.shape()[0], a.shape()[1]);
    let d = a.data();
    Tensor::new(&[c, r], (0..r * c).map(|i| d[(i % r) * c + i / r]).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    fn name(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
        }
    }
}

pub(crate) fn check_broadcast<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
        return Err(mismatch(op, sa, sb));
    }
    Ok(())
}

pub fn binary<T: Scalar>(op: BinaryOp, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_broadcast(op.name(), a, b)?;
    let bd = b.data();
    if op == BinaryOp::Div {
        if let Some(index) = bd.iter().position(|v| v.is_zero()) {
            return Err(NumericsError::ZeroDenominator { op: "div", index });
        }
    }
    let mut data = a.data().to_vec();
    fn apply<T: Copy>(data: &mut [T], b: &[T], f: impl Fn(T, T) -> T) {
        for chunk in data.chunks_mut(b.len()) {
            for (x, &y) in chunk.iter_mut().zip(b) {
                *x = f(*x, y);
            }
        }
    }
    match op {
        BinaryOp::Add => apply(&mut data, bd, |x, y| x + y),
        BinaryOp::Sub => apply(&mut data, bd, |x, y| x - y),
        BinaryOp::Mul => apply(&mut data, bd, |x, y| x * y),
        BinaryOp::Div => apply(&mut data, bd, |x, y| x / y),
    }
    Tensor::new(a.shape(), data)
}

pub fn map<T: Scalar>(a: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor::new(a.shape(), a.data().iter().map(|&v| f(v)).collect())
        .expect("map preserves shape")
}

pub fn scale<T: Scalar>(a: &Tensor<T>, factor: T) -> Tensor<T> {
    map(a, |v| v * factor)
}

pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    map(a, sigmoid_scalar)
}

/// ELU (alpha = 1) shifted by one: `x + 1` for `x >= 0`, `exp(x)` below.
pub fn elu_plus_one_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        x + T::one()
    } else {
        x.exp().max(T::min_positive_value())
    }
}

pub fn elu_plus_one<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    map(a, elu_plus_one_scalar)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// `tanh` through a single `exp`; saturates cleanly at both ends.
fn fast_tanh<T: Scalar>(x: T) -> T {
    let two = T::lit(2.0);
    T::one() - two / ((two * x).exp() + T::one())
}

/// Tanh-approximated GeLU.
pub fn gelu_scalar<T: Scalar>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let half = T::lit(0.5);
    half * x * (T::one() + fast_tanh(c * (x + a * x * x * x)))
}

pub fn gelu_grad_scalar<T: Scalar>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let half = T::lit(0.5);
    let inner = c * (x + a * x * x * x);
    let t = fast_tanh(inner);
    let dinner = c * (T::one() + T::lit(3.0) * a * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * dinner
}

pub fn gelu<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    map(a, gelu_scalar)
}

pub fn clamp_min<T: Scalar>(a: &Tensor<T>, lo: T) -> Tensor<T> {
    map(a, |v| v.max(lo))
}

fn softmax_row_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

/// Softmax over the last axis, max-subtracted.
pub fn softmax_rows<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let mut out = a.clone();
    let c = out.cols();
    for row in out.data_mut().chunks_mut(c) {
        softmax_row_in_place(row);
    }
    out
}

/// Row `t` of a rank-2 score matrix is softmaxed over columns `0..=t`;
/// masked entries are exactly zero.
pub fn causal_softmax<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || a.shape()[0] > a.shape()[1] {
        return Err(NumericsError::Invalid(format!(
            "causal_softmax: expected rows <= cols, got {:?}",
            a.shape()
        )));
    }
    let mut out = a.clone();
    let c = out.cols();
    for (t, row) in out.data_mut().chunks_mut(c).enumerate() {
        softmax_row_in_place(&mut row[..=t]);
        for v in &mut row[t + 1..] {
            *v = T::zero();
        }
    }
    Ok(out)
}

/// Sums out `axis`, removing it from the shape.
pub fn sum_axis<T: Scalar>(a: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let shape = a.shape();
    if axis >= shape.len() {
        return Err(NumericsError::OutOfRange {
            op: "sum_axis",
            index: axis,
            extent: shape.len(),
        });
    }
    let outer: usize = shape[..axis].iter().product();
    let extent = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![T::zero(); outer * inner];
    let d = a.data();
    for o in 0..outer {
        for e in 0..extent {
            let base = (o * extent + e) * inner;
            let dst = &mut out[o * inner..(o + 1) * inner];
            for (x, &v) in dst.iter_mut().zip(&d[base..base + inner]) {
                *x = *x + v;
            }
        }
    }
    let mut new_shape = shape.to_vec();
    new_shape.remove(axis);
    if new_shape.is_empty() {
        return Ok(Tensor::scalar(out[0]));
    }
    Tensor::new(&new_shape, out)
}

pub fn sum_all<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    Tensor::scalar(a.data().iter().copied().sum())
}

/// Concatenates along the last axis; leading shapes must agree.
pub fn concat_last<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| NumericsError::Invalid("concat: no inputs".into()))?;
    let lead = &first.shape()[..first.rank().saturating_sub(1)];
    for p in parts {
        if p.rank() != first.rank() || &p.shape()[..p.rank() - 1] != lead {
            return Err(mismatch("concat", first.shape(), p.shape()));
        }
    }
    let rows = first.rows();
    let total: usize = parts.iter().map(|p| p.cols()).sum();
    let mut out = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for p in parts {
            out.extend_from_slice(p.row(r));
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    Tensor::new(&shape, out)
}

/// Copies columns `start..start+len` of the last axis.
pub fn slice_last<T: Scalar>(a: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let c = a.cols();
    if len == 0 || start + len > c {
        return Err(NumericsError::OutOfRange {
            op: "slice_last",
            index: start + len,
            extent: c,
        });
    }
    let mut out = Vec::with_capacity(a.rows() * len);
    for r in 0..a.rows() {
        out.extend_from_slice(&a.row(r)[start..start + len]);
    }
    let mut shape = a.shape().to_vec();
    *shape.last_mut().expect("rank >= 1") = len;
    Tensor::new(&shape, out)
}

/// Copies rows `start..start+len` along the first axis.
pub fn slice_rows<T: Scalar>(a: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let n = a.shape().first().copied().unwrap_or(0);
    if len == 0 || start + len > n {
        return Err(NumericsError::OutOfRange {
            op: "slice_rows",
            index: start + len,
            extent: n,
        });
    }
    let inner = a.numel() / n;
    let mut shape = a.shape().to_vec();
    shape[0] = len;
    Tensor::new(&shape, a.data()[start * inner..(start + len) * inner].to_vec())
}

/// Stacks rank-≥1 tensors along the first axis.
pub fn concat_rows<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| NumericsError::Invalid("concat_rows: no inputs".into()))?;
    let tail = &first.shape()[1..];
    let mut rows = 0;
    let mut data = Vec::new();
    for p in parts {
        if p.rank() != first.rank() || &p.shape()[1..] != tail {
            return Err(mismatch("concat_rows", first.shape(), p.shape()));
        }
        rows += p.shape()[0];
        data.extend_from_slice(p.data());
    }
    let mut shape = first.shape().to_vec();
    shape[0] = rows;
    Tensor::new(&shape, data)
}

pub fn embedding<T: Scalar>(table: &Tensor<T>, ids: &[usize]) -> Result<Tensor<T>> {
    if table.rank() != 2 {
        return Err(NumericsError::Invalid(format!(
            "embedding: table must be rank 2, got {:?}",
            table.shape()
        )));
    }
    let (v, d) = (table.shape()[0], table.shape()[1]);
    let mut out = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        if id >= v {
            return Err(NumericsError::OutOfRange {
                op: "embedding",
                index: id,
                extent: v,
            });
        }
        out.extend_from_slice(table.row(id));
    }
    Tensor::new(&[ids.len(), d], out)
}

/// `sum_i w_i * CE(logits_i, target_i) / normalizer`, returned as a rank-0
/// tensor. Rows with zero weight are skipped.
pub fn cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    targets: &[usize],
    weights: &[T],
    normalizer: T,
) -> Result<Tensor<T>> {
    let (n, v) = (logits.rows(), logits.cols());
    if targets.len() != n || weights.len() != n {
        return Err(mismatch("cross_entropy", logits.shape(), &[targets.len()]));
    }
    if normalizer.is_zero() {
        return Err(NumericsError::ZeroDenominator {
            op: "cross_entropy",
            index: 0,
        });
    }
    let mut total = T::zero();
    for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
        if t >= v {
            return Err(NumericsError::OutOfRange {
                op: "cross_entropy",
                index: t,
                extent: v,
            });
        }
        if w.is_zero() {
            continue;
        }
        let row = logits.row(i);
        total = total + w * (log_sum_exp(row) - row[t]);
    }
    Ok(Tensor::scalar(total / normalizer))
}

pub fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = row.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}

/// Per-row `x / rms(x) * gain`.
pub fn rms_norm<T: Scalar>(x: &Tensor<T>, gain: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    let c = x.cols();
    if gain.shape() != [c] {
        return Err(mismatch("rms_norm", x.shape(), gain.shape()));
    }
    let g = gain.data();
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(c) {
        let inv = rms_inv(row, eps);
        for (v, &gi) in row.iter_mut().zip(g) {
            *v = *v * inv * gi;
        }
    }
    Ok(out)
}

pub(crate) fn rms_inv<T: Scalar>(row: &[T], eps: T) -> T {
    let ms = row.iter().map(|&v| v * v).sum::<T>() / T::lit(row.len() as f64);
    T::one() / (ms + eps).sqrt()
}

/// Rotation angle of the pair `(2i, 2i+1)` at absolute position `pos`.
pub fn rotary_angle(pos: usize, pair: usize, dim: usize, base: f64) -> f64 {
    let inv_freq = base.powf(-(2.0 * pair as f64) / dim as f64);
    pos as f64 * inv_freq
}

/// `(dim, base bits) -> (cos, sin)` tables indexed `pos * dim/2 + pair`,
/// grown on demand.
type RotaryTables = HashMap<(usize, u64), (Vec<f64>, Vec<f64>)>;

thread_local! {
    static ROTARY_TABLES: RefCell<RotaryTables> =
        RefCell::new(HashMap::new());
}

fn with_rotary_table<R>(dim: usize, base: f64, positions: usize, f: impl FnOnce(&[f64], &[f64]) -> R) -> R {
    ROTARY_TABLES.with(|cell| {
        let mut tables = cell.borrow_mut();
        let (cos, sin) = tables.entry((dim, base.to_bits())).or_default();
        let half = dim / 2;
        let have = cos.len() / half.max(1);
        if have < positions {
            let want = positions.max(2 * have);
            for pos in have..want {
                for pair in 0..half {
                    let theta = rotary_angle(pos, pair, dim, base);
                    cos.push(theta.cos());
                    sin.push(theta.sin());
                }
            }
        }
        f(cos, sin)
    })
}

/// Rotary transform of rows; row `t` sits at absolute position `offset + t`.
/// `inverse` rotates by the negated angle.
pub fn rotary<T: Scalar>(x: &Tensor<T>, offset: usize, base: f64, inverse: bool) -> Result<Tensor<T>> {
    let d = x.cols();
    if !d.is_multiple_of(2) {
        return Err(NumericsError::Invalid(format!(
            "rotary: last axis must be even, got {d}"
        )));
    }
    let mut out = x.clone();
    let half = d / 2;
    let sign = if inverse { -1.0 } else { 1.0 };
    with_rotary_table(d, base, offset + x.rows(), |cos, sin| {
        for (t, row) in out.data_mut().chunks_mut(d).enumerate() {
            let at = (offset + t) * half;
            for i in 0..half {
                let (s, c) = (T::lit(sign * sin[at + i]), T::lit(cos[at + i]));
                let (a, b) = (row[2 * i], row[2 * i + 1]);
                row[2 * i] = a * c - b * s;
                row[2 * i + 1] = a * s + b * c;
            }
        }
    });
    Ok(out)
}

/// `a[i, j] / den[i]` for `a: n×d` and `den: n×1`.
pub fn div_rows<T: Scalar>(a: &Tensor<T>, den: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d) = (a.rows(), a.cols());
    if den.numel() != n || den.cols() != 1 {
        return Err(mismatch("div_rows", a.shape(), den.shape()));
    }
    if let Some(index) = den.data().iter().position(|v| v.is_zero()) {
        return Err(NumericsError::ZeroDenominator {
            op: "div_rows",
            index,
        });
    }
    let mut out = a.clone();
    for (row, &q) in out.data_mut().chunks_mut(d).zip(den.data()) {
        for v in row.iter_mut() {
            *v = *v / q;
        }
    }
    Ok(out)
}
