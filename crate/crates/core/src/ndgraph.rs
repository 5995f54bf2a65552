//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is an append-only tape. Every operation appends a node whose
//! value is computed eagerly, so the inputs of node `k` always have ids
//! below `k` and [`Graph::backward`] is a single reverse sweep.
//!
//! Vectors are column tensors of shape `(n, 1)`. Parameter leaves may borrow
//! their tensor, which keeps large embedding tables out of the tape; rows
//! read through [`Graph::gather_row`] accumulate sparse row gradients.

use std::borrow::Cow;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "tensor",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite tensor entry {bad}")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            rows: data.len(),
            cols: 1,
            data,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::vector(vec![value])
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_vector(&self) -> bool {
        self.cols == 1 || self.rows == 1
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Single value of a `(1, 1)` tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MatVec(NodeId, NodeId),
    TMatVec(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Softmax(NodeId),
    Dot(NodeId, NodeId),
    Concat(Vec<NodeId>),
    Stack(Vec<NodeId>),
    GatherRow { table: NodeId, row: usize },
    Mean(NodeId),
    Sum(NodeId),
    Scale(NodeId, f64),
    Slice { input: NodeId, start: usize },
    CrossEntropy { logits: NodeId, target: usize },
}

struct Node<'a> {
    op: Op,
    value: Cow<'a, Tensor>,
    param: bool,
}

/// Gradient of one node. Embedding tables touched only through
/// `gather_row` keep a sparse per-row map.
#[derive(Clone, Debug, PartialEq)]
pub enum Grad {
    Dense(Vec<f64>),
    Rows {
        cols: usize,
        rows: BTreeMap<usize, Vec<f64>>,
    },
}

impl Grad {
    /// Materializes the gradient as a dense row-major buffer of `len` entries.
    pub fn to_dense(&self, len: usize) -> Vec<f64> {
        match self {
            Grad::Dense(v) => v.clone(),
            Grad::Rows { cols, rows } => {
                let mut out = vec![0.0; len];
                for (&r, g) in rows {
                    out[r * cols..(r + 1) * cols].copy_from_slice(g);
                }
                out
            }
        }
    }

    fn add_dense(&mut self, delta: &[f64]) {
        match self {
            Grad::Dense(v) => add_into(v, delta),
            Grad::Rows { .. } => {
                let mut dense = self.to_dense(delta.len());
                add_into(&mut dense, delta);
                *self = Grad::Dense(dense);
            }
        }
    }
}

fn add_into(acc: &mut [f64], delta: &[f64]) {
    for (a, d) in acc.iter_mut().zip(delta) {
        *a += d;
    }
}

/// Gradients of the parameter leaves reached from a loss node.
#[derive(Debug, Default)]
pub struct Gradients {
    by_node: BTreeMap<NodeId, Grad>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Grad> {
        self.by_node.get(&id)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Grad> {
        self.by_node.remove(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Grad)> {
        self.by_node.iter().map(|(k, v)| (*k, v))
    }
}

#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Trainable leaf borrowing its tensor.
    pub fn param(&mut self, value: &'a Tensor) -> NodeId {
        self.push(Op::Leaf, Cow::Borrowed(value), true)
    }

    /// Non-trainable leaf; its gradient is discarded.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, Cow::Owned(value), false)
    }

    fn push(&mut self, op: Op, value: Cow<'a, Tensor>, param: bool) -> NodeId {
        debug_assert!(value.all_finite(), "non-finite value produced by {op:?}");
        self.nodes.push(Node { op, value, param });
        NodeId(self.nodes.len() - 1)
    }

    fn owned(&mut self, op: Op, value: Tensor) -> NodeId {
        self.push(op, Cow::Owned(value), false)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(usize, usize)> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape {
                op,
                left: sa,
                right: sb,
            });
        }
        Ok(sa)
    }

    fn zip_with(
        &mut self,
        a: NodeId,
        b: NodeId,
        op: Op,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<NodeId> {
        let (r, c) = self.same_shape(name, a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Ok(self.owned(
            op,
            Tensor {
                rows: r,
                cols: c,
                data,
            },
        ))
    }

    fn map(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let t = self.value(a);
        let out = Tensor {
            rows: t.rows,
            cols: t.cols,
            data: t.data.iter().map(|v| f(*v)).collect(),
        };
        self.owned(op, out)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// `m · v` for `m: r×c` and a vector of length `c`; yields `(r, 1)`.
    pub fn matvec(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        let (mt, vt) = (self.value(m), self.value(v));
        if !vt.is_vector() || vt.len() != mt.cols {
            return Err(Error::Shape {
                op: "matvec",
                left: mt.shape(),
                right: vt.shape(),
            });
        }
        let out = (0..mt.rows)
            .map(|r| mt.row(r).iter().zip(&vt.data).map(|(a, b)| a * b).sum())
            .collect();
        Ok(self.owned(Op::MatVec(m, v), Tensor::vector(out)))
    }

    /// `mᵀ · v` for `m: r×c` and a vector of length `r`; yields `(c, 1)`.
    pub fn tmatvec(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        let (mt, vt) = (self.value(m), self.value(v));
        if !vt.is_vector() || vt.len() != mt.rows {
            return Err(Error::Shape {
                op: "tmatvec",
                left: mt.shape(),
                right: vt.shape(),
            });
        }
        let mut out = vec![0.0; mt.cols];
        for (r, w) in vt.data.iter().enumerate() {
            for (o, x) in out.iter_mut().zip(mt.row(r)) {
                *o += w * x;
            }
        }
        Ok(self.owned(Op::TMatVec(m, v), Tensor::vector(out)))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.cols != bt.rows {
            return Err(Error::Shape {
                op: "matmul",
                left: at.shape(),
                right: bt.shape(),
            });
        }
        let mut out = Tensor::zeros(at.rows, bt.cols);
        for i in 0..at.rows {
            for k in 0..at.cols {
                let x = at.get(i, k);
                for (o, y) in out.row_mut(i).iter_mut().zip(bt.row(k)) {
                    *o += x * y;
                }
            }
        }
        Ok(self.owned(Op::MatMul(a, b), out))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    /// Softmax over all entries of a vector, or over each row of a matrix.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::usage("softmax of an empty tensor"));
        }
        let mut out = t.clone();
        for chunk in softmax_chunks(&mut out) {
            softmax_in_place(chunk);
        }
        Ok(self.owned(Op::Softmax(a), out))
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.len() != bt.len() || !at.is_vector() || !bt.is_vector() {
            return Err(Error::Shape {
                op: "dot",
                left: at.shape(),
                right: bt.shape(),
            });
        }
        let s = at.data.iter().zip(&bt.data).map(|(x, y)| x * y).sum();
        Ok(self.owned(Op::Dot(a, b), Tensor::scalar(s)))
    }

    /// Concatenates vectors end to end into one `(Σn, 1)` vector.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if !t.is_vector() {
                return Err(Error::Shape {
                    op: "concat",
                    left: t.shape(),
                    right: (t.len(), 1),
                });
            }
            data.extend_from_slice(&t.data);
        }
        Ok(self.owned(Op::Concat(parts.to_vec()), Tensor::vector(data)))
    }

    /// Stacks equal-length vectors as the rows of an `n×d` matrix.
    pub fn stack(&mut self, rows: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = rows.first() else {
            return Err(Error::usage("stack of zero rows"));
        };
        let d = self.value(first).len();
        let mut data = Vec::with_capacity(d * rows.len());
        for &r in rows {
            let t = self.value(r);
            if t.len() != d || !t.is_vector() {
                return Err(Error::Shape {
                    op: "stack",
                    left: (d, 1),
                    right: t.shape(),
                });
            }
            data.extend_from_slice(&t.data);
        }
        let out = Tensor {
            rows: rows.len(),
            cols: d,
            data,
        };
        Ok(self.owned(Op::Stack(rows.to_vec()), out))
    }

    /// Row `row` of `table` as a `(cols, 1)` vector.
    pub fn gather_row(&mut self, table: NodeId, row: usize) -> Result<NodeId> {
        let t = self.value(table);
        if row >= t.rows {
            return Err(Error::Shape {
                op: "gather_row",
                left: t.shape(),
                right: (row, 1),
            });
        }
        let out = Tensor::vector(t.row(row).to_vec());
        Ok(self.owned(Op::GatherRow { table, row }, out))
    }

    /// Column means of an `r×c` tensor as a `(c, 1)` vector; a vector of
    /// shape `(n, 1)` reduces to its scalar mean.
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        if t.rows == 0 {
            return Err(Error::usage("mean over zero rows"));
        }
        let mut out = vec![0.0; t.cols];
        for r in 0..t.rows {
            add_into(&mut out, t.row(r));
        }
        let n = t.rows as f64;
        out.iter_mut().for_each(|v| *v /= n);
        Ok(self.owned(Op::Mean(a), Tensor::vector(out)))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data.iter().sum();
        self.owned(Op::Sum(a), Tensor::scalar(s))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        self.map(a, Op::Scale(a, k), |v| v * k)
    }

    /// Entries `start..start + len` of a vector.
    pub fn slice(&mut self, input: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let t = self.value(input);
        if !t.is_vector() || start + len > t.len() {
            return Err(Error::Shape {
                op: "slice",
                left: t.shape(),
                right: (start + len, 1),
            });
        }
        let out = Tensor::vector(t.data[start..start + len].to_vec());
        Ok(self.owned(Op::Slice { input, start }, out))
    }

    /// `-ln softmax(logits)[target]`, computed stably.
    pub fn cross_entropy(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        let t = self.value(logits);
        if !t.is_vector() || target >= t.len() {
            return Err(Error::Shape {
                op: "cross_entropy",
                left: t.shape(),
                right: (target, 1),
            });
        }
        let max = t.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + t.data.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - t.data[target];
        Ok(self.owned(Op::CrossEntropy { logits, target }, Tensor::scalar(loss)))
    }

    /// Reverse sweep from a scalar `loss`; returns gradients of parameter leaves.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::usage(format!(
                "backward requires a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Grad>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Grad::Dense(vec![1.0]));

        for k in (0..=loss.0).rev() {
            let Some(grad) = grads[k].take() else {
                continue;
            };
            let node = &self.nodes[k];
            if matches!(node.op, Op::Leaf) {
                grads[k] = Some(grad);
                continue;
            }
            let g = match &grad {
                Grad::Dense(v) => v.as_slice(),
                Grad::Rows { .. } => unreachable!("sparse gradients only land on leaves"),
            };
            self.propagate(&node.op, &node.value, g, &mut grads);
        }

        let mut out = Gradients::default();
        for (k, g) in grads.into_iter().enumerate() {
            if let Some(g) = g {
                if self.nodes[k].param {
                    out.by_node.insert(NodeId(k), g);
                }
            }
        }
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Grad>], id: NodeId, delta: &[f64]) {
        match &mut grads[id.0] {
            Some(g) => g.add_dense(delta),
            slot @ None => *slot = Some(Grad::Dense(delta.to_vec())),
        }
    }

    fn accumulate_row(&self, grads: &mut [Option<Grad>], table: NodeId, row: usize, delta: &[f64]) {
        let t = self.value(table);
        let is_leaf = matches!(self.nodes[table.0].op, Op::Leaf);
        let slot = &mut grads[table.0];
        match slot {
            None if is_leaf => {
                let mut rows = BTreeMap::new();
                rows.insert(row, delta.to_vec());
                *slot = Some(Grad::Rows { cols: t.cols, rows });
            }
            None => {
                let mut dense = vec![0.0; t.len()];
                add_into(&mut dense[row * t.cols..(row + 1) * t.cols], delta);
                *slot = Some(Grad::Dense(dense));
            }
            Some(Grad::Rows { rows, .. }) => match rows.get_mut(&row) {
                Some(r) => add_into(r, delta),
                None => {
                    rows.insert(row, delta.to_vec());
                }
            },
            Some(Grad::Dense(dense)) => {
                add_into(&mut dense[row * t.cols..(row + 1) * t.cols], delta)
            }
        }
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &[f64], grads: &mut [Option<Grad>]) {
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, a, g);
                self.accumulate(grads, b, g);
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, a, g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                self.accumulate(grads, b, &neg);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.value(a).data, &self.value(b).data);
                let ga: Vec<f64> = g.iter().zip(bv).map(|(g, y)| g * y).collect();
                let gb: Vec<f64> = g.iter().zip(av).map(|(g, x)| g * x).collect();
                self.accumulate(grads, a, &ga);
                self.accumulate(grads, b, &gb);
            }
            Op::MatVec(m, v) => {
                let (mt, vt) = (self.value(m), self.value(v));
                let mut gm = vec![0.0; mt.len()];
                for (r, gr) in g.iter().enumerate() {
                    for (o, x) in gm[r * mt.cols..(r + 1) * mt.cols].iter_mut().zip(&vt.data) {
                        *o = gr * x;
                    }
                }
                let mut gv = vec![0.0; vt.len()];
                for (r, gr) in g.iter().enumerate() {
                    for (o, w) in gv.iter_mut().zip(mt.row(r)) {
                        *o += gr * w;
                    }
                }
                self.accumulate(grads, m, &gm);
                self.accumulate(grads, v, &gv);
            }
            Op::TMatVec(m, v) => {
                // out = mᵀ v: dm[r][c] = v[r]·g[c]; dv[r] = m[r]·g
                let (mt, vt) = (self.value(m), self.value(v));
                let mut gm = vec![0.0; mt.len()];
                let mut gv = vec![0.0; vt.len()];
                for r in 0..mt.rows {
                    let vr = vt.data[r];
                    for (o, gc) in gm[r * mt.cols..(r + 1) * mt.cols].iter_mut().zip(g) {
                        *o = vr * gc;
                    }
                    gv[r] = mt.row(r).iter().zip(g).map(|(x, gc)| x * gc).sum();
                }
                self.accumulate(grads, m, &gm);
                self.accumulate(grads, v, &gv);
            }
            Op::MatMul(a, b) => {
                let (at, bt) = (self.value(a), self.value(b));
                let (n, k, m) = (at.rows, at.cols, bt.cols);
                let mut ga = vec![0.0; at.len()];
                let mut gb = vec![0.0; bt.len()];
                for i in 0..n {
                    for kk in 0..k {
                        let mut acc = 0.0;
                        for j in 0..m {
                            let gij = g[i * m + j];
                            acc += gij * bt.get(kk, j);
                            gb[kk * m + j] += at.get(i, kk) * gij;
                        }
                        ga[i * k + kk] = acc;
                    }
                }
                self.accumulate(grads, a, &ga);
                self.accumulate(grads, b, &gb);
            }
            Op::Tanh(a) => {
                let d: Vec<f64> = g
                    .iter()
                    .zip(&out.data)
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect();
                self.accumulate(grads, a, &d);
            }
            Op::Sigmoid(a) => {
                let d: Vec<f64> = g
                    .iter()
                    .zip(&out.data)
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect();
                self.accumulate(grads, a, &d);
            }
            Op::Softmax(a) => {
                let mut d = vec![0.0; g.len()];
                let width = softmax_width(out);
                for ((dc, gc), yc) in d
                    .chunks_mut(width)
                    .zip(g.chunks(width))
                    .zip(out.data.chunks(width))
                {
                    let inner: f64 = gc.iter().zip(yc).map(|(g, y)| g * y).sum();
                    for ((o, gi), yi) in dc.iter_mut().zip(gc).zip(yc) {
                        *o = yi * (gi - inner);
                    }
                }
                self.accumulate(grads, a, &d);
            }
            Op::Dot(a, b) => {
                let s = g[0];
                let ga: Vec<f64> = self.value(b).data.iter().map(|y| s * y).collect();
                let gb: Vec<f64> = self.value(a).data.iter().map(|x| s * x).collect();
                self.accumulate(grads, a, &ga);
                self.accumulate(grads, b, &gb);
            }
            Op::Concat(ref parts) | Op::Stack(ref parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    self.accumulate(grads, p, &g[offset..offset + n]);
                    offset += n;
                }
            }
            Op::GatherRow { table, row } => self.accumulate_row(grads, table, row, g),
            Op::Mean(a) => {
                let t = self.value(a);
                let n = t.rows as f64;
                let mut d = vec![0.0; t.len()];
                for r in 0..t.rows {
                    for (o, gc) in d[r * t.cols..(r + 1) * t.cols].iter_mut().zip(g) {
                        *o = gc / n;
                    }
                }
                self.accumulate(grads, a, &d);
            }
            Op::Sum(a) => {
                let d = vec![g[0]; self.value(a).len()];
                self.accumulate(grads, a, &d);
            }
            Op::Scale(a, k) => {
                let d: Vec<f64> = g.iter().map(|v| v * k).collect();
                self.accumulate(grads, a, &d);
            }
            Op::Slice { input, start } => {
                let mut d = vec![0.0; self.value(input).len()];
                d[start..start + g.len()].copy_from_slice(g);
                self.accumulate(grads, input, &d);
            }
            Op::CrossEntropy { logits, target } => {
                let mut p = self.value(logits).data.clone();
                softmax_in_place(&mut p);
                p[target] -= 1.0;
                p.iter_mut().for_each(|v| *v *= g[0]);
                self.accumulate(grads, logits, &p);
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax of a slice.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

fn softmax_width(t: &Tensor) -> usize {
    if t.is_vector() {
        t.len()
    } else {
        t.cols
    }
}

fn softmax_chunks(t: &mut Tensor) -> std::slice::ChunksMut<'_, f64> {
    let w = softmax_width(t);
    t.data.chunks_mut(w)
}

/// Five-point (fourth-order) central finite-difference check of the gradients of `build`'s loss with
/// respect to every entry of `params`.
///
/// `build` receives a fresh graph whose first `params.len()` nodes are the
/// parameter leaves, in order. Returns the maximum over entries of
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check<F>(params: &mut [Tensor], h: f64, build: F) -> Result<f64>
where
    F: for<'g> Fn(&mut Graph<'g>, &[NodeId]) -> Result<NodeId>,
{
    if h <= 0.0 {
        return Err(Error::usage("finite difference step must be positive"));
    }
    let analytic: Vec<Vec<f64>> = {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = params.iter().map(|p| g.param(p)).collect();
        let loss = build(&mut g, &ids)?;
        let grads = g.backward(loss)?;
        ids.iter()
            .zip(params.iter())
            .map(|(id, p)| {
                grads
                    .get(*id)
                    .map_or_else(|| vec![0.0; p.len()], |gr| gr.to_dense(p.len()))
            })
            .collect()
    };

    let eval = |params: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = params.iter().map(|p| g.param(p)).collect();
        let loss = build(&mut g, &ids)?;
        Ok(g.value(loss).item())
    };

    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        for j in 0..params[i].len() {
            let orig = params[i].data[j];
            let mut at = |offset: f64| -> Result<f64> {
                params[i].data[j] = orig + offset;
                eval(params)
            };
            let (p2, p1, m1, m2) = (at(2.0 * h)?, at(h)?, at(-h)?, at(-2.0 * h)?);
            params[i].data[j] = orig;
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
            let a = analytic[i][j];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn tanh_of_zero() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![0.0]));
        let y = g.tanh(x);
        assert_eq!(g.value(y).data(), &[0.0]);
    }

    #[test]
    fn softmax_symmetric_pair() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![0.0, 0.0]));
        let y = g.softmax(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn dot_by_hand() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let b = g.constant(Tensor::vector(vec![4.0, 5.0, 6.0]));
        let d = g.dot(a, b).unwrap();
        assert_eq!(g.value(d).item(), 32.0);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        match g.add(a, b) {
            Err(Error::Shape { op, left, right }) => {
                assert_eq!(op, "add");
                assert_eq!(left, (2, 1));
                assert_eq!(right, (3, 1));
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn grad_of_self_dot() {
        let v = Tensor::vector(vec![1.0, 2.0]);
        let mut g = Graph::new();
        let p = g.param(&v);
        let l = g.dot(p, p).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(p).unwrap().to_dense(2), vec![2.0, 4.0]);
    }

    #[test]
    fn grad_of_tanh_at_zero() {
        let x = Tensor::scalar(0.0);
        let mut g = Graph::new();
        let p = g.param(&x);
        let y = g.tanh(p);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(p).unwrap().to_dense(1), vec![1.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let mut g = Graph::new();
        let p = g.param(&x);
        assert!(matches!(g.backward(p), Err(Error::Usage(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let w = Tensor::vector(vec![1.0, -1.0]);
        let mut g = Graph::new();
        let p = g.param(&w);
        let x = g.constant(Tensor::vector(vec![3.0, 4.0]));
        let l = g.dot(p, x).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.iter().count(), 1);
        assert_eq!(grads.get(p).unwrap().to_dense(2), vec![3.0, 4.0]);
    }

    #[test]
    fn gather_row_scatters_sparse_and_accumulates() {
        let table = Tensor::from_fn(4, 2, |r, c| (r * 2 + c) as f64);
        let mut g = Graph::new();
        let t = g.param(&table);
        let a = g.gather_row(t, 1).unwrap();
        let b = g.gather_row(t, 1).unwrap();
        let c = g.gather_row(t, 3).unwrap();
        let s = g.add(a, b).unwrap();
        let s = g.add(s, c).unwrap();
        let l = g.sum(s);
        let grads = g.backward(l).unwrap();
        match grads.get(t).unwrap() {
            Grad::Rows { rows, .. } => {
                assert_eq!(rows.len(), 2);
                assert_eq!(rows[&1], vec![2.0, 2.0]);
                assert_eq!(rows[&3], vec![1.0, 1.0]);
            }
            other => panic!("expected sparse rows, got {other:?}"),
        }
    }

    #[test]
    fn linear_loss_fd_exact() {
        let mut params = vec![Tensor::vector(vec![0.3, -1.2, 2.5])];
        let err = finite_diff_check(&mut params, 1e-4, |g, ids| {
            let x = g.constant(Tensor::vector(vec![1.5, 0.25, -2.0]));
            g.dot(ids[0], x)
        })
        .unwrap();
        assert!(err < 1e-10, "err = {err}");
    }

    fn check(
        params: &mut [Tensor],
        build: impl for<'g> Fn(&mut Graph<'g>, &[NodeId]) -> Result<NodeId>,
    ) {
        let err = finite_diff_check(params, 1e-4, build).unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    fn seeded(rows: usize, cols: usize, seed: u64) -> Tensor {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    // Each op is wrapped in a fixed random projection so every output
    // entry contributes to the scalar loss with a distinct weight.
    fn project(g: &mut Graph<'_>, y: NodeId, seed: u64) -> Result<NodeId> {
        let n = g.value(y).len();
        let (r, c) = g.value(y).shape();
        let w = g.constant(seeded(r, c, seed));
        let m = g.mul(y, w)?;
        debug_assert_eq!(g.value(m).len(), n);
        Ok(g.sum(m))
    }

    #[test]
    fn every_op_passes_gradient_check() {
        let mut p = vec![
            seeded(3, 1, 1),
            seeded(3, 1, 2),
            seeded(2, 3, 3),
            seeded(3, 2, 4),
        ];
        check(&mut p, |g, i| {
            let y = g.add(i[0], i[1])?;
            project(g, y, 10)
        });
        check(&mut p, |g, i| {
            let y = g.sub(i[0], i[1])?;
            project(g, y, 11)
        });
        check(&mut p, |g, i| {
            let y = g.mul(i[0], i[1])?;
            project(g, y, 12)
        });
        check(&mut p, |g, i| {
            let y = g.matvec(i[2], i[0])?;
            project(g, y, 13)
        });
        check(&mut p, |g, i| {
            let y = g.tmatvec(i[3], i[0])?;
            project(g, y, 14)
        });
        check(&mut p, |g, i| {
            let y = g.matmul(i[2], i[3])?;
            project(g, y, 15)
        });
        check(&mut p, |g, i| {
            let y = g.tanh(i[0]);
            project(g, y, 16)
        });
        check(&mut p, |g, i| {
            let y = g.sigmoid(i[0]);
            project(g, y, 17)
        });
        check(&mut p, |g, i| {
            let y = g.softmax(i[0])?;
            project(g, y, 18)
        });
        check(&mut p, |g, i| {
            let y = g.softmax(i[2])?;
            project(g, y, 19)
        });
        check(&mut p, |g, i| g.dot(i[0], i[1]));
        check(&mut p, |g, i| {
            let y = g.concat(&[i[0], i[1]])?;
            project(g, y, 20)
        });
        check(&mut p, |g, i| {
            let y = g.stack(&[i[0], i[1], i[0]])?;
            project(g, y, 21)
        });
        check(&mut p, |g, i| {
            let a = g.gather_row(i[3], 2)?;
            let b = g.gather_row(i[3], 2)?;
            let y = g.mul(a, b)?;
            project(g, y, 22)
        });
        check(&mut p, |g, i| {
            let y = g.mean(i[3])?;
            project(g, y, 23)
        });
        check(&mut p, |g, i| {
            let y = g.scale(i[0], -2.5);
            project(g, y, 24)
        });
        check(&mut p, |g, i| {
            let y = g.slice(i[1], 1, 2)?;
            project(g, y, 25)
        });
        check(&mut p, |g, i| g.cross_entropy(i[0], 2));
    }

    #[test]
    fn softmax_shift_invariant() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(vec![0.1, 2.0, -3.0]));
        let b = g.constant(Tensor::vector(vec![100.1, 102.0, 97.0]));
        let sa = g.softmax(a).unwrap();
        let sb = g.softmax(b).unwrap();
        for (x, y) in g.value(sa).data().iter().zip(g.value(sb).data()) {
            assert!(close(*x, *y, 1e-12));
        }
        assert!(close(g.value(sa).data().iter().sum(), 1.0, 1e-12));
    }

    #[test]
    fn backward_is_deterministic() {
        let w = seeded(3, 3, 9);
        let x = seeded(3, 1, 8);
        let run = || {
            let mut g = Graph::new();
            let pw = g.param(&w);
            let px = g.param(&x);
            let h = g.matvec(pw, px).unwrap();
            let h = g.tanh(h);
            let s = g.softmax(h).unwrap();
            let l = g.dot(s, px).unwrap();
            let grads = g.backward(l).unwrap();
            (
                grads.get(pw).unwrap().to_dense(9),
                grads.get(px).unwrap().to_dense(3),
            )
        };
        assert_eq!(run(), run());
    }
}
