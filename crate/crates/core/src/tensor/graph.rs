//! Recorded computation graph (tape) with reverse-mode gradients.
//!
//! Every op evaluates eagerly and appends a node holding its output value and
//! the ids of its inputs. [`Graph::backward`] consumes the graph, walks the
//! nodes in reverse and returns the gradients of every node that requires one.

use super::kernels::{self, ConvGeom};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{AidError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Reshape(NodeId),
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        geom: ConvGeom,
    },
    Upsample {
        x: NodeId,
        factor: usize,
    },
    AvgPool2(NodeId),
    Concat0(Vec<NodeId>),
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Softplus(NodeId),
    Abs(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddRowBias(NodeId, NodeId),
    Softmax(NodeId, usize),
    NormalizeSum(NodeId, usize),
    Select {
        x: NodeId,
        axis: usize,
        index: usize,
    },
    Sum(NodeId),
    Mean(NodeId),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A single-use computation graph.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bindings: Vec<(NodeId, ParamId)>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
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

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf whose gradient is reported by [`Gradients::get`].
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf bound to a stored parameter; its gradient flows back through
    /// [`ParamStore::accumulate`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        let node = self.push(store.value(id).clone(), Op::Leaf, true);
        self.bindings.push((node, id));
        node
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).transpose()?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Zero-padded cross-correlation of a `C×H×W` input with `O×C×kh×kw` weights.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let geom = ConvGeom::new(self.shape(x), self.shape(w), self.shape(b), stride, pad)?;
        let mut out = vec![0.0; geom.o * geom.oh * geom.ow];
        kernels::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &mut out,
        );
        let value = Tensor::new(&[geom.o, geom.oh, geom.ow], out)?;
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }, rg))
    }

    /// Nearest-neighbour upsampling of a `C×H×W` tensor.
    pub fn upsample_nearest(&mut self, x: NodeId, factor: usize) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 {
            return Err(AidError::dim("upsample_nearest", &shape, &[0, 0, 0]));
        }
        if factor == 0 {
            return Err(AidError::Config("upsample factor must be >= 1".into()));
        }
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let (oh, ow) = (h * factor, w * factor);
        let src = self.value(x).data();
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                let in_row = &src[(ch * h + y / factor) * w..(ch * h + y / factor + 1) * w];
                let out_row = &mut out[(ch * oh + y) * ow..(ch * oh + y + 1) * ow];
                for (xo, o) in out_row.iter_mut().enumerate() {
                    *o = in_row[xo / factor];
                }
            }
        }
        let value = Tensor::new(&[c, oh, ow], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Upsample { x, factor }, rg))
    }

    /// 2×2 mean pooling with stride 2 of a `C×H×W` tensor with even `H`, `W`.
    pub fn avg_pool2(&mut self, x: NodeId) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 || shape[1] % 2 != 0 || shape[2] % 2 != 0 {
            return Err(AidError::Config(format!(
                "avg_pool2 needs a C×H×W input with even H and W, got {shape:?}"
            )));
        }
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let (oh, ow) = (h / 2, w / 2);
        let src = self.value(x).data();
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                let r0 = &src[(ch * h + 2 * y) * w..(ch * h + 2 * y + 1) * w];
                let r1 = &src[(ch * h + 2 * y + 1) * w..(ch * h + 2 * y + 2) * w];
                for xo in 0..ow {
                    out[(ch * oh + y) * ow + xo] =
                        0.25 * ((r0[2 * xo] + r0[2 * xo + 1]) + (r1[2 * xo] + r1[2 * xo + 1]));
                }
            }
        }
        let value = Tensor::new(&[c, oh, ow], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::AvgPool2(x), rg))
    }

    /// Concatenation along the leading axis; trailing extents must agree.
    pub fn concat0(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts
            .first()
            .ok_or_else(|| AidError::Argument("concat of zero tensors".into()))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for p in parts {
            let s = self.shape(*p);
            if s[1..] != tail[..] {
                return Err(AidError::dim("concat0", self.shape(*first), s));
            }
            lead += s[0];
            data.extend_from_slice(self.value(*p).data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(&tail);
        let value = Tensor::new(&shape, data)?;
        let rg = self.rg(parts);
        Ok(self.push(value, Op::Concat0(parts.to_vec()), rg))
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let value = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(value, op, rg)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |v| v.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        self.unary(a, |v| v * s, Op::Scale(a, s))
    }

    fn binary(&mut self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<NodeId> {
        let value = self.value(a).zip_map(self.value(b), f)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a length-`n` vector to every row of an `m×n` matrix.
    pub fn add_row_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let xs = self.shape(x);
        let bs = self.shape(bias);
        if xs.len() != 2 || bs != [xs[1]] {
            return Err(AidError::dim("add_row_bias", xs, bs));
        }
        let n = xs[1];
        let bv = self.value(bias).data().to_vec();
        let mut value = self.value(x).clone();
        for row in value.data_mut().chunks_mut(n) {
            for (v, b) in row.iter_mut().zip(&bv) {
                *v += b;
            }
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(value, Op::AddRowBias(x, bias), rg))
    }

    /// Max-stabilized softmax along `axis`.
    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(AidError::Argument(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let (outer, len, inner) = kernels::axis_split(&shape, axis);
        let mut out = vec![0.0; self.value(x).len()];
        kernels::softmax_forward(self.value(x).data(), &mut out, outer, len, inner);
        let value = Tensor::new(&shape, out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Softmax(x, axis), rg))
    }

    /// Divides every slice along `axis` by its sum. Inputs must be positive.
    pub fn normalize_sum(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(AidError::Argument(format!(
                "normalize axis {axis} out of range for shape {shape:?}"
            )));
        }
        let (outer, len, inner) = kernels::axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let s: f64 = (0..len).map(|l| src[base + l * inner]).sum();
                let inv = 1.0 / s;
                for l in 0..len {
                    out[base + l * inner] = src[base + l * inner] * inv;
                }
            }
        }
        let value = Tensor::new(&shape, out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::NormalizeSum(x, axis), rg))
    }

    /// Picks `index` along `axis`, dropping that axis.
    pub fn select(&mut self, x: NodeId, axis: usize, index: usize) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || index >= shape[axis] {
            return Err(AidError::Argument(format!(
                "select index {index} on axis {axis} out of range for shape {shape:?}"
            )));
        }
        let (outer, len, inner) = kernels::axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let base = (o * len + index) * inner;
            out.extend_from_slice(&src[base..base + inner]);
        }
        let mut out_shape: Vec<usize> = shape
            .iter()
            .enumerate()
            .filter(|&(a, _)| a != axis)
            .map(|(_, &d)| d)
            .collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let value = Tensor::new(&out_shape, out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Select { x, axis, index }, rg))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(value, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x);
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        let rg = self.rg(&[x]);
        self.push(value, Op::Mean(x), rg)
    }

    /// `x·W + b` for an `n×in` input, `in×out` weight and `out` bias.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xw = self.matmul(x, w)?;
        self.add_row_bias(xw, b)
    }

    /// Reverse pass from a single-element `loss` node. Consumes the graph.
    pub fn backward(self, loss: NodeId) -> Result<Gradients> {
        let Graph { mut nodes, bindings } = self;
        if nodes[loss.0].value.len() != 1 {
            return Err(AidError::dim("backward", nodes[loss.0].value.shape(), &[1]));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.0] = Some(Tensor::ones(nodes[loss.0].value.shape()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            if !nodes[i].requires_grad {
                continue;
            }
            backprop_node(&nodes, i, &g, &mut grads)?;
            // Inputs always precede their consumers, so this output is no longer read.
            if matches!(nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
            } else {
                nodes[i].value = Tensor::scalar(0.0);
            }
        }
        Ok(Gradients { grads, bindings })
    }
}

fn accum<'a>(
    nodes: &[Node],
    grads: &'a mut [Option<Tensor>],
    id: NodeId,
) -> Option<&'a mut [f64]> {
    if !nodes[id.0].requires_grad {
        return None;
    }
    let slot = &mut grads[id.0];
    if slot.is_none() {
        *slot = Some(Tensor::zeros(nodes[id.0].value.shape()));
    }
    slot.as_mut().map(|t| t.data_mut())
}

fn backprop_node(nodes: &[Node], i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
    let gd = g.data();
    let out = &nodes[i].value;
    let val = |id: NodeId| &nodes[id.0].value;
    match &nodes[i].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k, n) = kernels::matmul_dims(val(*a).shape(), val(*b).shape())?;
            let bv = val(*b).data();
            let av = val(*a).data();
            if let Some(da) = accum(nodes, grads, *a) {
                kernels::matmul_abt_acc(gd, bv, da, m, n, k);
            }
            if let Some(db) = accum(nodes, grads, *b) {
                kernels::matmul_atb_acc(av, gd, db, m, k, n);
            }
        }
        Op::Transpose(a) => {
            let s = out.shape();
            if let Some(da) = accum(nodes, grads, *a) {
                let mut tmp = vec![0.0; gd.len()];
                kernels::transpose(gd, &mut tmp, s[0], s[1]);
                da.iter_mut().zip(tmp).for_each(|(d, t)| *d += t);
            }
        }
        Op::Reshape(a) => {
            if let Some(da) = accum(nodes, grads, *a) {
                da.iter_mut().zip(gd).for_each(|(d, t)| *d += t);
            }
        }
        Op::Conv2d { x, w, b, geom } => {
            let xv = val(*x).data();
            let wv = val(*w).data();
            let mut dx = nodes[x.0].requires_grad.then(|| vec![0.0; xv.len()]);
            let mut dw = nodes[w.0].requires_grad.then(|| vec![0.0; wv.len()]);
            let mut db = nodes[b.0].requires_grad.then(|| vec![0.0; geom.o]);
            kernels::conv2d_backward(
                geom,
                xv,
                wv,
                gd,
                dx.as_deref_mut(),
                dw.as_deref_mut(),
                db.as_deref_mut(),
            );
            for (id, d) in [(*x, dx), (*w, dw), (*b, db)] {
                if let (Some(d), Some(acc)) = (d, accum(nodes, grads, id)) {
                    acc.iter_mut().zip(d).for_each(|(a, v)| *a += v);
                }
            }
        }
        Op::Upsample { x, factor } => {
            let s = val(*x).shape();
            let (c, h, w) = (s[0], s[1], s[2]);
            let (oh, ow) = (h * factor, w * factor);
            if let Some(dx) = accum(nodes, grads, *x) {
                for ch in 0..c {
                    for y in 0..oh {
                        let go_row = &gd[(ch * oh + y) * ow..(ch * oh + y + 1) * ow];
                        let base = (ch * h + y / factor) * w;
                        for (xo, gv) in go_row.iter().enumerate() {
                            dx[base + xo / factor] += gv;
                        }
                    }
                }
            }
        }
        Op::AvgPool2(x) => {
            let s = val(*x).shape();
            let (c, h, w) = (s[0], s[1], s[2]);
            let (oh, ow) = (h / 2, w / 2);
            if let Some(dx) = accum(nodes, grads, *x) {
                for ch in 0..c {
                    for y in 0..h {
                        for xi in 0..w {
                            dx[(ch * h + y) * w + xi] += 0.25 * gd[(ch * oh + y / 2) * ow + xi / 2];
                        }
                    }
                }
            }
        }
        Op::Concat0(parts) => {
            let mut offset = 0;
            for p in parts {
                let n = val(*p).len();
                if let Some(dp) = accum(nodes, grads, *p) {
                    dp.iter_mut()
                        .zip(&gd[offset..offset + n])
                        .for_each(|(d, t)| *d += t);
                }
                offset += n;
            }
        }
        Op::Relu(a) => {
            let av = val(*a).data();
            if let Some(da) = accum(nodes, grads, *a) {
                for ((d, &x), &gv) in da.iter_mut().zip(av).zip(gd) {
                    if x > 0.0 {
                        *d += gv;
                    }
                }
            }
        }
        Op::Sigmoid(a) => {
            let y = out.data();
            if let Some(da) = accum(nodes, grads, *a) {
                for ((d, &s), &gv) in da.iter_mut().zip(y).zip(gd) {
                    *d += gv * s * (1.0 - s);
                }
            }
        }
        Op::Tanh(a) => {
            let y = out.data();
            if let Some(da) = accum(nodes, grads, *a) {
                for ((d, &t), &gv) in da.iter_mut().zip(y).zip(gd) {
                    *d += gv * (1.0 - t * t);
                }
            }
        }
        Op::Softplus(a) => {
            let av = val(*a).data();
            if let Some(da) = accum(nodes, grads, *a) {
                for ((d, &x), &gv) in da.iter_mut().zip(av).zip(gd) {
                    *d += gv * sigmoid(x);
                }
            }
        }
        Op::Abs(a) => {
            let av = val(*a).data();
            if let Some(da) = accum(nodes, grads, *a) {
                for ((d, &x), &gv) in da.iter_mut().zip(av).zip(gd) {
                    // subgradient 0 at the kink
                    if x > 0.0 {
                        *d += gv;
                    } else if x < 0.0 {
                        *d -= gv;
                    }
                }
            }
        }
        Op::Add(a, b) => {
            for id in [*a, *b] {
                if let Some(d) = accum(nodes, grads, id) {
                    d.iter_mut().zip(gd).for_each(|(d, t)| *d += t);
                }
            }
        }
        Op::Sub(a, b) => {
            if let Some(d) = accum(nodes, grads, *a) {
                d.iter_mut().zip(gd).for_each(|(d, t)| *d += t);
            }
            if let Some(d) = accum(nodes, grads, *b) {
                d.iter_mut().zip(gd).for_each(|(d, t)| *d -= t);
            }
        }
        Op::Mul(a, b) => {
            let av = val(*a).data();
            let bv = val(*b).data();
            if let Some(d) = accum(nodes, grads, *a) {
                for ((d, &y), &gv) in d.iter_mut().zip(bv).zip(gd) {
                    *d += gv * y;
                }
            }
            if let Some(d) = accum(nodes, grads, *b) {
                for ((d, &x), &gv) in d.iter_mut().zip(av).zip(gd) {
                    *d += gv * x;
                }
            }
        }
        Op::Scale(a, s) => {
            if let Some(d) = accum(nodes, grads, *a) {
                d.iter_mut().zip(gd).for_each(|(d, t)| *d += s * t);
            }
        }
        Op::AddRowBias(x, bias) => {
            let n = val(*bias).len();
            if let Some(d) = accum(nodes, grads, *x) {
                d.iter_mut().zip(gd).for_each(|(d, t)| *d += t);
            }
            if let Some(db) = accum(nodes, grads, *bias) {
                for row in gd.chunks(n) {
                    db.iter_mut().zip(row).for_each(|(d, t)| *d += t);
                }
            }
        }
        Op::Softmax(x, axis) => {
            let (outer, len, inner) = kernels::axis_split(out.shape(), *axis);
            let y = out.data();
            if let Some(dx) = accum(nodes, grads, *x) {
                kernels::softmax_backward(y, gd, dx, outer, len, inner);
            }
        }
        Op::NormalizeSum(x, axis) => {
            let (outer, len, inner) = kernels::axis_split(out.shape(), *axis);
            let y = out.data();
            let xv = val(*x).data();
            if let Some(dx) = accum(nodes, grads, *x) {
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let s: f64 = (0..len).map(|l| xv[base + l * inner]).sum();
                        let gy: f64 = (0..len)
                            .map(|l| gd[base + l * inner] * y[base + l * inner])
                            .sum();
                        for l in 0..len {
                            let idx = base + l * inner;
                            dx[idx] += (gd[idx] - gy) / s;
                        }
                    }
                }
            }
        }
        Op::Select { x, axis, index } => {
            let (outer, len, inner) = kernels::axis_split(val(*x).shape(), *axis);
            if let Some(dx) = accum(nodes, grads, *x) {
                for o in 0..outer {
                    let base = (o * len + index) * inner;
                    dx[base..base + inner]
                        .iter_mut()
                        .zip(&gd[o * inner..(o + 1) * inner])
                        .for_each(|(d, t)| *d += t);
                }
            }
        }
        Op::Sum(x) => {
            let gv = gd[0];
            if let Some(dx) = accum(nodes, grads, *x) {
                dx.iter_mut().for_each(|d| *d += gv);
            }
        }
        Op::Mean(x) => {
            let n = val(*x).len() as f64;
            let gv = gd[0] / n;
            if let Some(dx) = accum(nodes, grads, *x) {
                dx.iter_mut().for_each(|d| *d += gv);
            }
        }
    }
    Ok(())
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    // log(1 + e^x) without overflow
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    bindings: Vec<(NodeId, ParamId)>,
}

impl Gradients {
    /// Gradient of a leaf created with [`Graph::input`] or [`Graph::param`].
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub(crate) fn param_grads(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.bindings
            .iter()
            .filter_map(|(node, pid)| self.grads[node.0].as_ref().map(|g| (*pid, g)))
    }
}
