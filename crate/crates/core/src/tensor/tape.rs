//! Wengert-list reverse-mode differentiation over 2-D tensors.
//!
//! A [`Tape`] borrows a [`ParamStore`] for the duration of one forward pass.
//! Parameter leaves reference the store instead of copying it, so embedding
//! tables are never duplicated onto the tape.

use super::params::{Gradients, ParamId, ParamStore};
use super::{softmax_backward, softmax_in_place, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Tensor),
    Sigmoid(Var),
    Tanh(Var),
    NegLog(Var, f64),
    Softmax(Var, usize),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Transpose(Var),
    Sum(Var),
    MaxCols(Var, Vec<usize>),
    Pick(Var, usize),
}

struct Node {
    /// `None` for parameter leaves, whose value lives in the store.
    value: Option<Tensor>,
    op: Op,
    needs_grad: bool,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

fn dims2(t: &Tensor) -> (usize, usize) {
    assert_eq!(t.shape().len(), 2, "tape ops need 2-D tensors, got {:?}", t.shape());
    (t.shape()[0], t.shape()[1])
}

/// `[n, k] x [k, m]`.
fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `dy [n, m] x b^T` where `b` is `[k, m]`.
fn matmul_bt(dy: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        let drow = &dy[i * m..(i + 1) * m];
        for p in 0..k {
            let brow = &b[p * m..(p + 1) * m];
            out[i * k + p] = drow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `a^T x dy` where `a` is `[n, k]` and `dy` is `[n, m]`.
fn matmul_at(a: &[f64], dy: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * m];
    for i in 0..n {
        let drow = &dy[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * m..(p + 1) * m];
            for (o, d) in orow.iter_mut().zip(drow) {
                *o += av * d;
            }
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape { params, nodes: Vec::new(), param_vars: vec![None; params.len()] }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.value(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        dims2(self.value(v))
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value: Some(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        dims2(&t);
        self.nodes.push(Node { value: Some(t), op: Op::Constant, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        dims2(self.params.value(id));
        self.nodes.push(Node { value: None, op: Op::Param(id), needs_grad: true });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = self.shape(a);
        let (k2, m) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dimensions {k} vs {k2}");
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), n, k, m);
        self.push(Tensor::from_parts(vec![n, m], out), Op::MatMul(a, b), &[a, b])
    }

    fn zip_same(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert_eq!(sa, sb, "elementwise shape mismatch");
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| f(*x, *y)).collect();
        self.push(Tensor::from_parts(vec![sa.0, sa.1], data), op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn broadcast_row(&mut self, x: Var, r: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (n, m) = self.shape(x);
        assert_eq!(self.shape(r), (1, m), "row broadcast expects [1, {m}]");
        let rv = self.value(r).data();
        let data = self
            .value(x)
            .data()
            .chunks(m)
            .flat_map(|row| row.iter().zip(rv).map(|(a, b)| f(*a, *b)))
            .collect();
        self.push(Tensor::from_parts(vec![n, m], data), op, &[x, r])
    }

    /// Adds a `[1, m]` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, r: Var) -> Var {
        self.broadcast_row(x, r, |a, b| a + b, Op::AddRow(x, r))
    }

    /// Multiplies every row of `x` elementwise by a `[1, m]` row.
    pub fn mul_row(&mut self, x: Var, r: Var) -> Var {
        self.broadcast_row(x, r, |a, b| a * b, Op::MulRow(x, r))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v * c).collect();
        let out = Tensor::from_parts(t.shape().to_vec(), data);
        self.push(out, Op::Scale(x, c), &[x])
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mul_const(&mut self, x: Var, c: Tensor) -> Var {
        let t = self.value(x);
        assert_eq!(t.shape(), c.shape(), "mul_const shape mismatch");
        let data = t.data().iter().zip(c.data()).map(|(a, b)| a * b).collect();
        let out = Tensor::from_parts(t.shape().to_vec(), data);
        self.push(out, Op::MulConst(x, c), &[x])
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x);
        let out = Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|v| f(*v)).collect());
        self.push(out, op, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    /// `-ln(max(x, floor))` elementwise. Clamped entries pass no gradient.
    pub fn neg_log(&mut self, x: Var, floor: f64) -> Result<Var> {
        let t = self.value(x);
        if let Some(bad) = t.data().iter().find(|v| v.is_nan() || **v < 0.0 || (floor <= 0.0 && **v <= 0.0)) {
            return Err(Error::NumericDomain(format!("-log of {bad}")));
        }
        Ok(self.map(x, |v| -v.max(floor).ln(), Op::NegLog(x, floor)))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= 2 {
            return Err(Error::Shape(format!("softmax axis {axis} on a 2-D tensor")));
        }
        t.check_finite("softmax input")?;
        let mut out = t.clone();
        let shape = out.shape().to_vec();
        softmax_in_place(out.data_mut(), &shape, axis);
        Ok(self.push(out, Op::Softmax(x, axis), &[x]))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let (n, m) = self.shape(x);
        assert!(start < end && end <= m, "column slice {start}..{end} of {m}");
        let data = self.value(x).data().chunks(m).flat_map(|row| row[start..end].iter().copied()).collect();
        self.push(Tensor::from_parts(vec![n, end - start], data), Op::SliceCols(x, start), &[x])
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Var {
        let (n, m) = self.shape(x);
        assert!(start < end && end <= n, "row slice {start}..{end} of {n}");
        let data = self.value(x).data()[start * m..end * m].to_vec();
        self.push(Tensor::from_parts(vec![end - start, m], data), Op::SliceRows(x, start), &[x])
    }

    pub fn row(&mut self, x: Var, r: usize) -> Var {
        self.slice_rows(x, r, r + 1)
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty());
        let n = self.shape(xs[0]).0;
        let widths: Vec<usize> = xs
            .iter()
            .map(|&v| {
                let (rn, m) = self.shape(v);
                assert_eq!(rn, n, "concat_cols row mismatch");
                m
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(n * total);
        for i in 0..n {
            for (&v, &w) in xs.iter().zip(&widths) {
                data.extend_from_slice(&self.value(v).data()[i * w..(i + 1) * w]);
            }
        }
        self.push(Tensor::from_parts(vec![n, total], data), Op::ConcatCols(xs.to_vec()), xs)
    }

    pub fn concat_rows(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty());
        let m = self.shape(xs[0]).1;
        let mut data = Vec::new();
        let mut n = 0;
        for &v in xs {
            let (rn, rm) = self.shape(v);
            assert_eq!(rm, m, "concat_rows column mismatch");
            n += rn;
            data.extend_from_slice(self.value(v).data());
        }
        self.push(Tensor::from_parts(vec![n, m], data), Op::ConcatRows(xs.to_vec()), xs)
    }

    /// Selects rows of `table` by index (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let (n, m) = self.shape(table);
        let t = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * m);
        for &i in ids {
            assert!(i < n, "row index {i} out of range for {n} rows");
            data.extend_from_slice(&t[i * m..(i + 1) * m]);
        }
        self.push(Tensor::from_parts(vec![ids.len(), m], data), Op::GatherRows(table, ids.to_vec()), &[table])
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let (n, m) = self.shape(x);
        let t = self.value(x).data();
        let mut data = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                data[j * n + i] = t[i * m + j];
            }
        }
        self.push(Tensor::from_parts(vec![m, n], data), Op::Transpose(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Row-wise maximum, `[n, m] -> [n, 1]`. Ties route gradient to the
    /// first maximal column.
    pub fn max_cols(&mut self, x: Var) -> Var {
        let (n, m) = self.shape(x);
        let t = self.value(x).data();
        let mut idx = Vec::with_capacity(n);
        let mut data = Vec::with_capacity(n);
        for row in t.chunks(m) {
            let (j, v) = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bj, bv), (j, &v)| if v > bv { (j, v) } else { (bj, bv) });
            idx.push(j);
            data.push(v);
        }
        self.push(Tensor::from_parts(vec![n, 1], data), Op::MaxCols(x, idx), &[x])
    }

    /// The single element at `(r, c)` as a `[1, 1]` value.
    pub fn pick(&mut self, x: Var, r: usize, c: usize) -> Var {
        let (n, m) = self.shape(x);
        assert!(r < n && c < m, "pick ({r}, {c}) out of [{n}, {m}]");
        let v = self.value(x).data()[r * m + c];
        self.push(Tensor::scalar(v), Op::Pick(x, r * m + c), &[x])
    }

    /// Reverse pass from a scalar `loss`. Parameters the loss does not
    /// depend on receive zero gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::Shape(format!("backward needs a scalar loss, got shape {:?}", lt.shape())));
        }
        let mut out = Gradients::zeros_like(self.params);
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.backprop_node(node, idx, &g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn backprop_node(
        &self,
        node: &Node,
        idx: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        out: &mut Gradients,
    ) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &dyn Fn(&mut [f64])| {
            if !nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.value(v).len()]);
            f(slot);
        };
        let y = || self.value(Var(idx)).data();

        match &node.op {
            Op::Constant => {}
            Op::Param(id) => {
                for (o, d) in out.get_mut(*id).data_mut().iter_mut().zip(g) {
                    *o += d;
                }
            }
            Op::MatMul(a, b) => {
                let (n, k) = self.shape(*a);
                let m = self.shape(*b).1;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &|s| {
                    for (o, d) in s.iter_mut().zip(matmul_bt(g, bv, n, k, m)) {
                        *o += d;
                    }
                });
                acc(*b, &|s| {
                    for (o, d) in s.iter_mut().zip(matmul_at(av, g, n, k, m)) {
                        *o += d;
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &|s| s.iter_mut().zip(g).for_each(|(o, d)| *o += d));
                acc(*b, &|s| s.iter_mut().zip(g).for_each(|(o, d)| *o += d));
            }
            Op::Sub(a, b) => {
                acc(*a, &|s| s.iter_mut().zip(g).for_each(|(o, d)| *o += d));
                acc(*b, &|s| s.iter_mut().zip(g).for_each(|(o, d)| *o -= d));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &|s| {
                    for ((o, d), y) in s.iter_mut().zip(g).zip(bv) {
                        *o += d * y;
                    }
                });
                acc(*b, &|s| {
                    for ((o, d), x) in s.iter_mut().zip(g).zip(av) {
                        *o += d * x;
                    }
                });
            }
            Op::AddRow(x, r) => {
                let m = self.shape(*x).1;
                acc(*x, &|s| s.iter_mut().zip(g).for_each(|(o, d)| *o += d));
                acc(*r, &|s| {
                    for row in g.chunks(m) {
                        s.iter_mut().zip(row).for_each(|(o, d)| *o += d);
                    }
                });
            }
            Op::MulRow(x, r) => {
                let m = self.shape(*x).1;
                let (xv, rv) = (self.value(*x).data(), self.value(*r).data());
                acc(*x, &|s| {
                    for (srow, grow) in s.chunks_mut(m).zip(g.chunks(m)) {
                        for ((o, d), rr) in srow.iter_mut().zip(grow).zip(rv) {
                            *o += d * rr;
                        }
                    }
                });
                acc(*r, &|s| {
                    for (grow, xrow) in g.chunks(m).zip(xv.chunks(m)) {
                        for ((o, d), xx) in s.iter_mut().zip(grow).zip(xrow) {
                            *o += d * xx;
                        }
                    }
                });
            }
            Op::Scale(x, c) => {
                acc(*x, &|s| s.iter_mut().zip(g).for_each(|(o, d)| *o += d * c));
            }
            Op::MulConst(x, c) => {
                acc(*x, &|s| {
                    for ((o, d), cc) in s.iter_mut().zip(g).zip(c.data()) {
                        *o += d * cc;
                    }
                });
            }
            Op::Sigmoid(x) => {
                let yv = y();
                acc(*x, &|s| {
                    for ((o, d), yy) in s.iter_mut().zip(g).zip(yv) {
                        *o += d * yy * (1.0 - yy);
                    }
                });
            }
            Op::Tanh(x) => {
                let yv = y();
                acc(*x, &|s| {
                    for ((o, d), yy) in s.iter_mut().zip(g).zip(yv) {
                        *o += d * (1.0 - yy * yy);
                    }
                });
            }
            Op::NegLog(x, floor) => {
                let xv = self.value(*x).data();
                acc(*x, &|s| {
                    for ((o, d), xx) in s.iter_mut().zip(g).zip(xv) {
                        if *xx > *floor {
                            *o -= d / xx;
                        }
                    }
                });
            }
            Op::Softmax(x, axis) => {
                let yt = self.value(Var(idx));
                let dx = softmax_backward(yt.data(), g, yt.shape(), *axis);
                acc(*x, &|s| s.iter_mut().zip(&dx).for_each(|(o, d)| *o += d));
            }
            Op::SliceCols(x, start) => {
                let m = self.shape(*x).1;
                let w = self.shape(Var(idx)).1;
                acc(*x, &|s| {
                    for (srow, grow) in s.chunks_mut(m).zip(g.chunks(w)) {
                        srow[*start..start + w].iter_mut().zip(grow).for_each(|(o, d)| *o += d);
                    }
                });
            }
            Op::SliceRows(x, start) => {
                let m = self.shape(*x).1;
                acc(*x, &|s| {
                    s[start * m..start * m + g.len()].iter_mut().zip(g).for_each(|(o, d)| *o += d);
                });
            }
            Op::ConcatCols(xs) => {
                let total = self.shape(Var(idx)).1;
                let mut off = 0;
                for &v in xs {
                    let w = self.shape(v).1;
                    acc(v, &|s| {
                        for (srow, grow) in s.chunks_mut(w).zip(g.chunks(total)) {
                            srow.iter_mut().zip(&grow[off..off + w]).for_each(|(o, d)| *o += d);
                        }
                    });
                    off += w;
                }
            }
            Op::ConcatRows(xs) => {
                let mut off = 0;
                for &v in xs {
                    let len = self.value(v).len();
                    acc(v, &|s| s.iter_mut().zip(&g[off..off + len]).for_each(|(o, d)| *o += d));
                    off += len;
                }
            }
            Op::GatherRows(table, ids) => {
                let m = self.shape(*table).1;
                acc(*table, &|s| {
                    for (k, &i) in ids.iter().enumerate() {
                        s[i * m..(i + 1) * m].iter_mut().zip(&g[k * m..(k + 1) * m]).for_each(|(o, d)| *o += d);
                    }
                });
            }
            Op::Transpose(x) => {
                let (n, m) = self.shape(*x);
                acc(*x, &|s| {
                    for i in 0..n {
                        for j in 0..m {
                            s[i * m + j] += g[j * n + i];
                        }
                    }
                });
            }
            Op::Sum(x) => {
                acc(*x, &|s| s.iter_mut().for_each(|o| *o += g[0]));
            }
            Op::MaxCols(x, argmax) => {
                let m = self.shape(*x).1;
                acc(*x, &|s| {
                    for (i, &j) in argmax.iter().enumerate() {
                        s[i * m + j] += g[i];
                    }
                });
            }
            Op::Pick(x, flat) => {
                acc(*x, &|s| s[*flat] += g[0]);
            }
        }
    }
}
