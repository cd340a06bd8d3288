//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] records every operation applied to its variables together with
//! the values it produced. Calling [`Graph::backward`] on a `1×1` output walks
//! the tape in reverse and accumulates gradients for every parameter that was
//! read through [`Graph::param`]. Graphs built with [`Graph::inference`] record
//! values only and refuse to run the backward pass.
//!
//! Binary elementwise operations broadcast: along each axis the two operand
//! extents must either agree or one of them must be `1`.

use std::cell::Cell;

use crate::error::{Result, VamohError};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{matmul_acc, matmul_nt_acc, matmul_tn_acc, Matrix};

thread_local! {
    static BACKWARD_CALLS: Cell<usize> = const { Cell::new(0) };
}

/// Number of backward passes executed on the calling thread so far.
pub fn backward_calls_on_current_thread() -> usize {
    BACKWARD_CALLS.with(Cell::get)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug)]
enum Unary<T> {
    LeakyRelu(T),
    Sigmoid,
    Tanh,
    Exp,
    Ln,
    Softplus,
    Square,
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

enum Op<T> {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Binary(Binary, Var, Var),
    Unary(Unary<T>, Var),
    Scale(Var, T),
    Offset(Var),
    Clamp(Var, T, T),
    SumAll(Var),
    SumRows(Var),
    SumCols(Var),
    LogSoftmax(Var),
    Slice { src: Var, offset: usize },
    ConcatCols(Vec<Var>),
    RepeatRows(Var),
    GatherRows(Var, Vec<usize>),
    GroupSum(Var, usize),
    BatchedMatVec { weights: Var, input: Var, out: usize, inp: usize },
    Pointwise { inputs: Vec<(Var, Matrix<T>)> },
}

struct Node<T> {
    value: Option<Matrix<T>>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<'p, T: Scalar> {
    store: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
    trainable: bool,
}

/// Parameter gradients indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn empty(num_params: usize) -> Self {
        Self { grads: vec![None; num_params] }
    }

    pub fn get(&self, id: ParamId) -> Option<&Matrix<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix<T>)> {
        self.grads.iter().enumerate().filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    pub fn accumulate(&mut self, other: &Gradients<T>) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (dst, src) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(src) = src {
                match dst {
                    Some(d) => d.add_assign(src),
                    None => *dst = Some(src.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for g in self.grads.iter_mut().flatten() {
            g.scale_assign(s);
        }
    }

    pub fn global_norm(&self) -> T {
        self.grads.iter().flatten().map(Matrix::sum_sq).sum::<T>().sqrt()
    }

    /// First parameter whose gradient holds a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<ParamId> {
        self.iter().find(|(_, g)| !g.all_finite()).map(|(id, _)| id)
    }
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> (usize, usize) {
    let axis = |x: usize, y: usize| {
        if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            panic!("cannot broadcast {a:?} with {b:?}")
        }
    };
    (axis(a.0, b.0), axis(a.1, b.1))
}

#[inline]
fn bidx(shape: (usize, usize), i: usize, j: usize) -> usize {
    let r = if shape.0 == 1 { 0 } else { i };
    let c = if shape.1 == 1 { 0 } else { j };
    r * shape.1 + c
}

/// Sums a full-shape gradient down to a (possibly broadcast) operand shape.
fn reduce_to<T: Scalar>(g: &Matrix<T>, shape: (usize, usize)) -> Matrix<T> {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = Matrix::zeros(shape.0, shape.1);
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            out.data_mut()[bidx(shape, i, j)] += g.get(i, j);
        }
    }
    out
}

impl<'p, T: Scalar> Graph<'p, T> {
    /// A graph whose parameters receive gradients.
    pub fn new(store: &'p ParamStore<T>) -> Self {
        Self { store, nodes: Vec::new(), param_vars: vec![None; store.len()], trainable: true }
    }

    /// A forward-only graph; [`Graph::backward`] fails on it.
    pub fn inference(store: &'p ParamStore<T>) -> Self {
        Self { store, nodes: Vec::new(), param_vars: vec![None; store.len()], trainable: false }
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value: Some(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    #[inline]
    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.store.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn scalar(&self, v: Var) -> T {
        self.value(v).scalar_value()
    }

    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn constant_scalar(&mut self, value: T) -> Var {
        self.constant(Matrix::scalar(value))
    }

    /// Reads a parameter from the store. Repeated reads share one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node { value: None, op: Op::Param(id), needs_grad: self.trainable });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols(), bv.rows(), "matmul {:?} by {:?}", av.shape(), bv.shape());
        let mut out = Matrix::zeros(av.rows(), bv.cols());
        matmul_acc(av.data(), bv.data(), out.data_mut(), av.rows(), av.cols(), bv.cols());
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let ng = self.ng(a);
        self.push(out, Op::Transpose(a), ng)
    }

    fn binary(&mut self, op: Binary, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        let (r, c) = broadcast_shape(sa, sb);
        let (ad, bd) = (av.data(), bv.data());
        let out = Matrix::from_fn(r, c, |i, j| {
            let x = ad[bidx(sa, i, j)];
            let y = bd[bidx(sb, i, j)];
            match op {
                Binary::Add => x + y,
                Binary::Sub => x - y,
                Binary::Mul => x * y,
                Binary::Div => x / y,
            }
        });
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Binary(op, a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Div, a, b)
    }

    fn unary(&mut self, op: Unary<T>, a: Var) -> Var {
        let out = self.value(a).map(|x| match op {
            Unary::LeakyRelu(s) => {
                if x > T::zero() {
                    x
                } else {
                    s * x
                }
            }
            Unary::Sigmoid => x.sigmoid(),
            Unary::Tanh => x.tanh(),
            Unary::Exp => x.exp(),
            Unary::Ln => x.ln(),
            Unary::Softplus => x.softplus(),
            Unary::Square => x * x,
        });
        let ng = self.ng(a);
        self.push(out, Op::Unary(op, a), ng)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        self.unary(Unary::LeakyRelu(slope), a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Unary::Tanh, a)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Unary::Exp, a)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(Unary::Ln, a)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(Unary::Softplus, a)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(Unary::Square, a)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -T::one())
    }

    /// `a + s` elementwise.
    pub fn offset(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x + s);
        let ng = self.ng(a);
        self.push(out, Op::Offset(a), ng)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        let out = self.value(a).map(|x| x.max(lo).min(hi));
        let ng = self.ng(a);
        self.push(out, Op::Clamp(a, lo, hi), ng)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Matrix::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(out, Op::SumAll(a), ng)
    }

    /// Sums over rows: `n×c → 1×c`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = Matrix::zeros(1, av.cols());
        for i in 0..av.rows() {
            for (o, &x) in out.data_mut().iter_mut().zip(av.row(i)) {
                *o += x;
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::SumRows(a), ng)
    }

    /// Sums over columns: `n×c → n×1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let out = Matrix::from_fn(av.rows(), 1, |i, _| av.row(i).iter().copied().sum());
        let ng = self.ng(a);
        self.push(out, Op::SumCols(a), ng)
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let n = self.shape(a).0;
        let s = self.sum_rows(a);
        self.scale(s, T::one() / T::lit(n as f64))
    }

    /// Row-wise log-softmax with max shifting.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = av.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::LogSoftmax(a), ng)
    }

    /// Reads `rows×cols` consecutive values of `src` (row-major) starting at `offset`.
    pub fn slice(&mut self, src: Var, offset: usize, rows: usize, cols: usize) -> Var {
        let sv = self.value(src);
        assert!(offset + rows * cols <= sv.len(), "slice out of range");
        let out = Matrix::from_vec(rows, cols, sv.data()[offset..offset + rows * cols].to_vec())
            .expect("slice shape");
        let ng = self.ng(src);
        self.push(out, Op::Slice { src, offset }, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut c0 = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
            for i in 0..rows {
                out.row_mut(i)[c0..c0 + pv.cols()].copy_from_slice(pv.row(i));
            }
            c0 += pv.cols();
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    /// Tiles a `1×c` row `n` times.
    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.rows(), 1, "repeat_rows expects a row vector");
        let out = Matrix::from_fn(n, av.cols(), |_, j| av.get(0, j));
        let ng = self.ng(a);
        self.push(out, Op::RepeatRows(a), ng)
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Var {
        let out = self.value(a).select_rows(indices);
        let ng = self.ng(a);
        self.push(out, Op::GatherRows(a, indices.to_vec()), ng)
    }

    /// Sums consecutive groups of `k` rows: `(n·k)×c → n×c`.
    pub fn group_sum(&mut self, a: Var, k: usize) -> Var {
        let av = self.value(a);
        assert!(k > 0 && av.rows() % k == 0, "group_sum: {} rows not divisible by {k}", av.rows());
        let mut out = Matrix::zeros(av.rows() / k, av.cols());
        for i in 0..av.rows() {
            let dst = out.row_mut(i / k);
            for (o, &x) in dst.iter_mut().zip(av.row(i)) {
                *o += x;
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::GroupSum(a, k), ng)
    }

    /// Per-row matrix-vector product: row `r` of `weights` holds an `out×inp`
    /// matrix (row-major) applied to row `r` of `input`.
    pub fn batched_matvec(&mut self, weights: Var, input: Var, out: usize, inp: usize) -> Var {
        let (wv, hv) = (self.value(weights), self.value(input));
        assert_eq!(wv.rows(), hv.rows(), "batched_matvec row mismatch");
        assert_eq!(wv.cols(), out * inp, "batched_matvec weight width");
        assert_eq!(hv.cols(), inp, "batched_matvec input width");
        let mut res = Matrix::zeros(wv.rows(), out);
        for r in 0..wv.rows() {
            let w = wv.row(r);
            let h = hv.row(r);
            for (o, y) in res.row_mut(r).iter_mut().enumerate() {
                let wrow = &w[o * inp..(o + 1) * inp];
                *y = wrow.iter().zip(h).map(|(&a, &b)| a * b).sum();
            }
        }
        let ng = self.ng(weights) || self.ng(input);
        self.push(res, Op::BatchedMatVec { weights, input, out, inp }, ng)
    }

    /// Elementwise function with caller-supplied value and partial derivatives.
    ///
    /// Each `(input, partials)` pair holds the full-shape partial derivative
    /// of the output with respect to that input; inputs whose shape is
    /// smaller (broadcast) receive the reduced gradient.
    pub fn pointwise(&mut self, value: Matrix<T>, inputs: Vec<(Var, Matrix<T>)>) -> Var {
        for (v, d) in &inputs {
            assert_eq!(d.shape(), value.shape(), "pointwise partial shape");
            broadcast_shape(value.shape(), self.shape(*v));
        }
        let ng = inputs.iter().any(|(v, _)| self.ng(*v));
        self.push(value, Op::Pointwise { inputs }, ng)
    }

    /// Reverse pass from a `1×1` output.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.trainable {
            return Err(VamohError::NoGradient("graph was built for inference".into()));
        }
        if self.shape(loss) != (1, 1) {
            return Err(VamohError::Dimension("backward needs a scalar output".into()));
        }
        BACKWARD_CALLS.with(|c| c.set(c.get() + 1));

        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut out = Gradients::empty(self.store.len());
        grads[loss.0] = Some(Matrix::scalar(T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    out.grads[id.0] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                    if self.ng(*a) {
                        let mut da = Matrix::zeros(n, k);
                        matmul_nt_acc(g.data(), bv.data(), da.data_mut(), n, m, k);
                        acc(&mut grads, *a, da);
                    }
                    if self.ng(*b) {
                        let mut db = Matrix::zeros(k, m);
                        matmul_tn_acc(av.data(), g.data(), db.data_mut(), n, k, m);
                        acc(&mut grads, *b, db);
                    }
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()),
                Op::Binary(op, a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (sa, sb) = (av.shape(), bv.shape());
                    let (ad, bd) = (av.data(), bv.data());
                    if self.ng(*a) {
                        let full = Matrix::from_fn(g.rows(), g.cols(), |i, j| {
                            let gij = g.get(i, j);
                            match op {
                                Binary::Add | Binary::Sub => gij,
                                Binary::Mul => gij * bd[bidx(sb, i, j)],
                                Binary::Div => gij / bd[bidx(sb, i, j)],
                            }
                        });
                        acc(&mut grads, *a, reduce_to(&full, sa));
                    }
                    if self.ng(*b) {
                        let full = Matrix::from_fn(g.rows(), g.cols(), |i, j| {
                            let gij = g.get(i, j);
                            match op {
                                Binary::Add => gij,
                                Binary::Sub => -gij,
                                Binary::Mul => gij * ad[bidx(sa, i, j)],
                                Binary::Div => {
                                    let y = bd[bidx(sb, i, j)];
                                    -gij * ad[bidx(sa, i, j)] / (y * y)
                                }
                            }
                        });
                        acc(&mut grads, *b, reduce_to(&full, sb));
                    }
                }
                Op::Unary(op, a) => {
                    let x = self.value(*a);
                    let y = node.value.as_ref().expect("unary value");
                    let mut d = g;
                    for ((dv, &xv), &yv) in d.data_mut().iter_mut().zip(x.data()).zip(y.data()) {
                        let local = match op {
                            Unary::LeakyRelu(s) => {
                                if xv > T::zero() {
                                    T::one()
                                } else {
                                    *s
                                }
                            }
                            Unary::Sigmoid => yv * (T::one() - yv),
                            Unary::Tanh => T::one() - yv * yv,
                            Unary::Exp => yv,
                            Unary::Ln => T::one() / xv,
                            Unary::Softplus => xv.sigmoid(),
                            Unary::Square => (T::one() + T::one()) * xv,
                        };
                        *dv *= local;
                    }
                    acc(&mut grads, *a, d);
                }
                Op::Scale(a, s) => {
                    let mut d = g;
                    d.scale_assign(*s);
                    acc(&mut grads, *a, d);
                }
                Op::Offset(a) => acc(&mut grads, *a, g),
                Op::Clamp(a, lo, hi) => {
                    let x = self.value(*a);
                    let mut d = g;
                    for (dv, &xv) in d.data_mut().iter_mut().zip(x.data()) {
                        if xv < *lo || xv > *hi {
                            *dv = T::zero();
                        }
                    }
                    acc(&mut grads, *a, d);
                }
                Op::SumAll(a) => {
                    let (r, c) = self.shape(*a);
                    acc(&mut grads, *a, Matrix::filled(r, c, g.scalar_value()));
                }
                Op::SumRows(a) => {
                    let (r, c) = self.shape(*a);
                    acc(&mut grads, *a, Matrix::from_fn(r, c, |_, j| g.get(0, j)));
                }
                Op::SumCols(a) => {
                    let (r, c) = self.shape(*a);
                    acc(&mut grads, *a, Matrix::from_fn(r, c, |i, _| g.get(i, 0)));
                }
                Op::LogSoftmax(a) => {
                    let y = node.value.as_ref().expect("log_softmax value");
                    let mut d = g;
                    for i in 0..d.rows() {
                        let gsum: T = d.row(i).iter().copied().sum();
                        let yrow = y.row(i);
                        for (dv, &yv) in d.row_mut(i).iter_mut().zip(yrow) {
                            *dv -= yv.exp() * gsum;
                        }
                    }
                    acc(&mut grads, *a, d);
                }
                Op::Slice { src, offset } => {
                    let (r, c) = self.shape(*src);
                    let mut d = Matrix::zeros(r, c);
                    d.data_mut()[*offset..*offset + g.len()].copy_from_slice(g.data());
                    acc(&mut grads, *src, d);
                }
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for &p in parts {
                        let pc = self.shape(p).1;
                        if self.ng(p) {
                            let d = Matrix::from_fn(g.rows(), pc, |i, j| g.get(i, c0 + j));
                            acc(&mut grads, p, d);
                        }
                        c0 += pc;
                    }
                }
                Op::RepeatRows(a) => {
                    let c = g.cols();
                    let mut d = Matrix::zeros(1, c);
                    for i in 0..g.rows() {
                        for (o, &x) in d.data_mut().iter_mut().zip(g.row(i)) {
                            *o += x;
                        }
                    }
                    acc(&mut grads, *a, d);
                }
                Op::GatherRows(a, indices) => {
                    let (r, c) = self.shape(*a);
                    let mut d = Matrix::zeros(r, c);
                    for (k, &src) in indices.iter().enumerate() {
                        for (o, &x) in d.row_mut(src).iter_mut().zip(g.row(k)) {
                            *o += x;
                        }
                    }
                    acc(&mut grads, *a, d);
                }
                Op::GroupSum(a, k) => {
                    let (r, c) = self.shape(*a);
                    acc(&mut grads, *a, Matrix::from_fn(r, c, |i, j| g.get(i / k, j)));
                }
                Op::BatchedMatVec { weights, input, out: n_out, inp } => {
                    let (wv, hv) = (self.value(*weights), self.value(*input));
                    if self.ng(*weights) {
                        let mut dw = Matrix::zeros(wv.rows(), wv.cols());
                        for r in 0..wv.rows() {
                            let h = hv.row(r);
                            let gr = g.row(r);
                            let drow = dw.row_mut(r);
                            for o in 0..*n_out {
                                for i in 0..*inp {
                                    drow[o * inp + i] = gr[o] * h[i];
                                }
                            }
                        }
                        acc(&mut grads, *weights, dw);
                    }
                    if self.ng(*input) {
                        let mut dh = Matrix::zeros(hv.rows(), hv.cols());
                        for r in 0..wv.rows() {
                            let w = wv.row(r);
                            let gr = g.row(r);
                            let drow = dh.row_mut(r);
                            for o in 0..*n_out {
                                for i in 0..*inp {
                                    drow[i] += gr[o] * w[o * inp + i];
                                }
                            }
                        }
                        acc(&mut grads, *input, dh);
                    }
                }
                Op::Pointwise { inputs } => {
                    for (v, partial) in inputs {
                        if !self.ng(*v) {
                            continue;
                        }
                        let mut full = partial.clone();
                        for (f, &gv) in full.data_mut().iter_mut().zip(g.data()) {
                            *f *= gv;
                        }
                        let shape = self.shape(*v);
                        acc(&mut grads, *v, reduce_to(&full, shape));
                    }
                }
            }
        }
        Ok(out)
    }
}

fn acc<T: Scalar>(grads: &mut [Option<Matrix<T>>], v: Var, d: Matrix<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&d),
        slot @ None => *slot = Some(d),
    }
}
