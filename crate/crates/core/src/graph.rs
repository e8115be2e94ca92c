//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as it executes. Nodes are appended in
//! execution order, so the recording order is a topological order and
//! [`Graph::backward`] simply walks it in reverse. Leaves created with
//! [`Graph::param`] write their gradients back into the shared [`Param`]
//! buffers; calling `backward` twice without zeroing accumulates twice.
//!
//! ```
//! use phm_core::{Graph, Param, Tensor};
//!
//! let w = Param::new(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
//! let mut g = Graph::new();
//! let wv = g.param(&w);
//! let x = g.constant(Tensor::from_rows(&[vec![5.0], vec![6.0]]).unwrap());
//! let y = g.matmul(wv, x).unwrap();
//! let loss = g.sum(y).unwrap();
//! g.backward(loss).unwrap();
//! assert_eq!(w.grad().unwrap(), vec![5.0, 6.0, 5.0, 6.0]);
//! ```

use crate::error::{dim_err, PhmError, Result};
use crate::kernels;
use crate::phm::kernel as phm_kernel;
use crate::tensor::{Param, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(v),
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

enum Op {
    Leaf(Option<Param>),
    MatMul(Var, Var),
    Transpose(Var),
    Kron(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    Act(Var, Activation),
    Softmax(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    SliceRows { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    Select { x: Var, index: usize },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    Mse { pred: Var, target: Tensor },
    CrossEntropy { logits: Var, targets: Vec<usize> },
    LayerNorm { x: Var, gamma: Var, beta: Var, eps: f64 },
    Gather { table: Var, ids: Vec<usize> },
    PhmImplicit { a: Var, s: Var, x: Var },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of executed operations. Rebuilt for every forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(PhmError::NonFinite(name));
        }
        let requires_grad = match &op {
            Op::Leaf(p) => p.as_ref().is_some_and(Param::trainable),
            _ => op_inputs(&op).iter().any(|&v| self.needs_grad(v)),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a parameter leaf. Gradients reach `p` only if it is trainable.
    pub fn param(&mut self, p: &Param) -> Var {
        let value = p.snapshot();
        self.nodes.push(Node {
            value,
            requires_grad: p.trainable(),
            op: Op::Leaf(Some(p.clone())),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            requires_grad: false,
            op: Op::Leaf(None),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(v, Op::MatMul(a, b), "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).transpose()?;
        self.push(v, Op::Transpose(a), "transpose")
    }

    pub fn kron(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).kron(self.value(b))?;
        self.push(v, Op::Kron(a, b), "kron")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        self.push(v, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        self.push(v, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_with(self.value(b), |x, y| x * y)?;
        self.push(v, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, a: Var, alpha: f64) -> Result<Var> {
        let v = self.value(a).scale(alpha);
        self.push(v, Op::Scale(a, alpha), "scale")
    }

    /// Adds a length-`c` vector to every row of an `…×c` tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(bias);
        let (_, cols) = xv.rows_cols();
        if bv.numel() != cols {
            return dim_err(format!("bias of {} for rows of {cols}", bv.numel()));
        }
        let mut out = xv.clone();
        out.zero_grad();
        for row in out.data_mut().chunks_mut(cols) {
            row.iter_mut().zip(bv.data()).for_each(|(o, b)| *o += b);
        }
        self.push(out, Op::AddBias(x, bias), "add_bias")
    }

    pub fn activation(&mut self, x: Var, f: Activation) -> Result<Var> {
        let v = self.value(x).map(|t| f.apply(t));
        self.push(v, Op::Act(x, f), "activation")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Tanh)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    /// Softmax over the last axis, computed with the row maximum subtracted.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.softmax_impl(x, false)
    }

    /// Softmax over the last axis of a rank-2 tensor where row `i` only
    /// attends to columns `j <= i`.
    pub fn softmax_causal(&mut self, x: Var) -> Result<Var> {
        self.softmax_impl(x, true)
    }

    fn softmax_impl(&mut self, x: Var, causal: bool) -> Result<Var> {
        let xv = self.value(x);
        if causal {
            rank2(xv)?;
        }
        let (_, cols) = xv.rows_cols();
        let mut out = xv.clone();
        out.zero_grad();
        for (i, row) in out.data_mut().chunks_mut(cols).enumerate() {
            let live = if causal { i.min(cols - 1) + 1 } else { cols };
            softmax_row(&mut row[..live]);
            row[live..].iter_mut().for_each(|v| *v = 0.0);
        }
        let op = Op::Softmax(x);
        self.push(out, op, "softmax")
    }

    /// Contiguous column block `[start, start+len)` of the last axis.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.rows_cols();
        if len == 0 || start + len > cols {
            return dim_err(format!("column slice {start}+{len} of {cols}"));
        }
        let mut data = Vec::with_capacity(rows * len);
        for row in xv.data().chunks(cols) {
            data.extend_from_slice(&row[start..start + len]);
        }
        let mut shape = xv.shape().to_vec();
        match shape.last_mut() {
            Some(last) => *last = len,
            None => shape.push(len),
        }
        let v = Tensor::new(shape, data)?;
        self.push(v, Op::SliceCols { x, start }, "slice_cols")
    }

    /// Splits the last axis into `ways` equal contiguous chunks.
    pub fn split_lastdim(&mut self, x: Var, ways: usize) -> Result<Vec<Var>> {
        let (_, cols) = self.value(x).rows_cols();
        if ways == 0 || cols % ways != 0 {
            return dim_err(format!("cannot split last axis of {cols} into {ways}"));
        }
        let width = cols / ways;
        (0..ways)
            .map(|w| self.slice_cols(x, w * width, width))
            .collect()
    }

    /// Concatenates along the last axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return dim_err("concat of nothing");
        };
        let (rows, _) = self.value(first).rows_cols();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).rows_cols();
            if r != rows {
                return dim_err(format!("concat rows {r} vs {rows}"));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let mut shape = self.value(first).shape().to_vec();
        match shape.last_mut() {
            Some(last) => *last = total,
            None => shape.push(total),
        }
        let v = Tensor::new(shape, data)?;
        self.push(v, Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    /// Rows `[start, start+len)` of a rank-2 tensor.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = rank2(xv)?;
        if len == 0 || start + len > rows {
            return dim_err(format!("row slice {start}+{len} of {rows}"));
        }
        let v = Tensor::new(
            vec![len, cols],
            xv.data()[start * cols..(start + len) * cols].to_vec(),
        )?;
        self.push(v, Op::SliceRows { x, start }, "slice_rows")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return dim_err("concat of nothing");
        };
        let (_, cols) = rank2(self.value(first))?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = rank2(self.value(p))?;
            if c != cols {
                return dim_err(format!("concat cols {c} vs {cols}"));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let v = Tensor::new(vec![rows, cols], data)?;
        self.push(v, Op::ConcatRows(parts.to_vec()), "concat_rows")
    }

    /// Sub-tensor at `index` along the first axis.
    pub fn select(&mut self, x: Var, index: usize) -> Result<Var> {
        let v = self.value(x).select(index)?;
        self.push(v, Op::Select { x, index }, "select")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshape(shape)?;
        self.push(v, Op::Reshape(x), "reshape")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), "mean")
    }

    /// Mean squared error over every entry.
    pub fn mse(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let diff = self.value(pred).sub(target)?;
        let s = diff.data().iter().map(|d| d * d).sum::<f64>() / diff.numel() as f64;
        let op = Op::Mse {
            pred,
            target: target.clone(),
        };
        self.push(Tensor::scalar(s), op, "mse")
    }

    /// Mean token cross-entropy of `rows×vocab` logits against class ids.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (rows, vocab) = rank2(lv)?;
        if targets.len() != rows {
            return dim_err(format!("{} targets for {rows} rows", targets.len()));
        }
        let mut total = 0.0;
        for (row, &t) in lv.data().chunks(vocab).zip(targets) {
            if t >= vocab {
                return Err(PhmError::Contract(format!("target {t} >= vocab {vocab}")));
            }
            total += log_sum_exp(row) - row[t];
        }
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
        };
        self.push(Tensor::scalar(total / rows as f64), op, "cross_entropy")
    }

    /// Normalizes each row over the last axis, then applies `gamma` and `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let (_, cols) = xv.rows_cols();
        if self.value(gamma).numel() != cols || self.value(beta).numel() != cols {
            return dim_err("layer norm affine parameters do not match row width");
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut out = Vec::with_capacity(xv.numel());
        for row in xv.data().chunks(cols) {
            let (mean, inv_std) = row_moments(row, eps);
            out.extend(
                row.iter()
                    .zip(g.iter().zip(b))
                    .map(|(&v, (&gi, &bi))| gi * (v - mean) * inv_std + bi),
            );
        }
        let v = Tensor::new(xv.shape().to_vec(), out)?;
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            eps,
        };
        self.push(v, op, "layer_norm")
    }

    /// Rows of `table` picked by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (rows, cols) = rank2(tv)?;
        if ids.is_empty() {
            return dim_err("gather of no ids");
        }
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            if i >= rows {
                return Err(PhmError::Contract(format!("id {i} >= table rows {rows}")));
            }
            data.extend_from_slice(&tv.data()[i * cols..(i + 1) * cols]);
        }
        let v = Tensor::new(vec![ids.len(), cols], data)?;
        let op = Op::Gather {
            table,
            ids: ids.to_vec(),
        };
        self.push(v, op, "gather")
    }

    /// `x · Hᵀ` with `H = Σᵢ a[i] ⊗ s[i]`, evaluated without forming `H`.
    ///
    /// `a` is `n×n×n`, `s` is `n×(k/n)×(d/n)` and `x` is `…×d`.
    pub fn phm_implicit(&mut self, a: Var, s: Var, x: Var) -> Result<Var> {
        let dims = phm_kernel::Dims::from_shapes(self.shape(a), self.shape(s))?;
        let xv = self.value(x);
        let (batch, d) = xv.rows_cols();
        if d != dims.d() {
            return dim_err(format!("input width {d}, layer expects {}", dims.d()));
        }
        let out = phm_kernel::forward(
            &dims,
            self.value(a).data(),
            self.value(s).data(),
            xv.data(),
            batch,
        );
        let mut shape = xv.shape().to_vec();
        match shape.last_mut() {
            Some(last) => *last = dims.k(),
            None => shape.push(dims.k()),
        }
        let v = Tensor::new(shape, out)?;
        self.push(v, Op::PhmImplicit { a, s, x }, "phm_implicit")
    }

    /// Propagates `d loss / d node` to every trainable parameter leaf.
    ///
    /// Gradients are added into the parameters' buffers.
    pub fn backward(&self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(PhmError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
        }
        Ok(())
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let mut send = |v: Var, contrib: Vec<f64>| {
            if !self.needs_grad(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(buf) => buf.iter_mut().zip(&contrib).for_each(|(b, c)| *b += c),
                slot @ None => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf(Some(p)) => p.accumulate_grad(g),
            Op::Leaf(None) => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = rank2(av)?;
                let (_, n) = rank2(bv)?;
                if self.needs_grad(*a) {
                    let bt = kernels::transpose(k, n, bv.data());
                    send(*a, kernels::gemm(m, n, k, g, &bt));
                }
                if self.needs_grad(*b) {
                    let at = kernels::transpose(m, k, av.data());
                    send(*b, kernels::gemm(k, m, n, &at, g));
                }
            }
            Op::Transpose(a) => {
                let (r, c) = rank2(self.value(*a))?;
                send(*a, kernels::transpose(c, r, g));
            }
            Op::Kron(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, n) = rank2(av)?;
                let (p, q) = rank2(bv)?;
                let cols = n * q;
                let mut ga = vec![0.0; m * n];
                let mut gb = vec![0.0; p * q];
                for i in 0..m {
                    for j in 0..n {
                        let x = av.data()[i * n + j];
                        let mut acc = 0.0;
                        for r in 0..p {
                            let off = (i * p + r) * cols + j * q;
                            let grow = &g[off..off + q];
                            let brow = &bv.data()[r * q..(r + 1) * q];
                            acc += kernels::dot(grow, brow);
                            for (gbv, &gv) in gb[r * q..(r + 1) * q].iter_mut().zip(grow) {
                                *gbv += x * gv;
                            }
                        }
                        ga[i * n + j] = acc;
                    }
                }
                send(*a, ga);
                send(*b, gb);
            }
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                send(*a, g.iter().zip(bv).map(|(g, b)| g * b).collect());
                send(*b, g.iter().zip(av).map(|(g, a)| g * a).collect());
            }
            Op::Scale(a, alpha) => send(*a, g.iter().map(|v| alpha * v).collect()),
            Op::AddBias(x, b) => {
                let cols = self.value(*b).numel();
                let mut gb = vec![0.0; cols];
                for row in g.chunks(cols) {
                    gb.iter_mut().zip(row).for_each(|(o, v)| *o += v);
                }
                send(*x, g.to_vec());
                send(*b, gb);
            }
            Op::Act(x, f) => {
                let xv = self.value(*x).data();
                let yv = node.value.data();
                let gx = g
                    .iter()
                    .zip(xv.iter().zip(yv))
                    .map(|(g, (&x, &y))| g * f.derivative(x, y))
                    .collect();
                send(*x, gx);
            }
            Op::Softmax(x) => {
                let (_, cols) = node.value.rows_cols();
                let mut gx = Vec::with_capacity(g.len());
                for (grow, yrow) in g.chunks(cols).zip(node.value.data().chunks(cols)) {
                    let inner = kernels::dot(grow, yrow);
                    gx.extend(grow.iter().zip(yrow).map(|(g, y)| y * (g - inner)));
                }
                send(*x, gx);
            }
            Op::SliceCols { x, start } => {
                let (rows, cols) = self.value(*x).rows_cols();
                let (_, len) = node.value.rows_cols();
                let mut gx = vec![0.0; rows * cols];
                for (i, grow) in g.chunks(len).enumerate() {
                    gx[i * cols + start..i * cols + start + len].copy_from_slice(grow);
                }
                send(*x, gx);
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = node.value.rows_cols();
                let mut offset = 0;
                for &p in parts {
                    let (_, w) = self.value(p).rows_cols();
                    let mut gp = Vec::with_capacity(rows * w);
                    for i in 0..rows {
                        gp.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                    }
                    offset += w;
                    send(p, gp);
                }
            }
            Op::SliceRows { x, start } => {
                let xv = self.value(*x);
                let (_, cols) = rank2(xv)?;
                let mut gx = vec![0.0; xv.numel()];
                gx[start * cols..start * cols + g.len()].copy_from_slice(g);
                send(*x, gx);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    send(p, g[offset..offset + len].to_vec());
                    offset += len;
                }
            }
            Op::Select { x, index } => {
                let xv = self.value(*x);
                let stride = node.value.numel();
                let mut gx = vec![0.0; xv.numel()];
                gx[index * stride..(index + 1) * stride].copy_from_slice(g);
                send(*x, gx);
            }
            Op::Reshape(x) => send(*x, g.to_vec()),
            Op::Sum(x) => send(*x, vec![g[0]; self.value(*x).numel()]),
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                send(*x, vec![g[0] / n as f64; n]);
            }
            Op::Mse { pred, target } => {
                let pv = self.value(*pred).data();
                let scale = 2.0 * g[0] / pv.len() as f64;
                send(
                    *pred,
                    pv.iter()
                        .zip(target.data())
                        .map(|(p, t)| scale * (p - t))
                        .collect(),
                );
            }
            Op::CrossEntropy { logits, targets } => {
                let lv = self.value(*logits);
                let (rows, vocab) = rank2(lv)?;
                let scale = g[0] / rows as f64;
                let mut gl = Vec::with_capacity(lv.numel());
                for (row, &t) in lv.data().chunks(vocab).zip(targets) {
                    let mut p = row.to_vec();
                    softmax_row(&mut p);
                    p[t] -= 1.0;
                    gl.extend(p.into_iter().map(|v| v * scale));
                }
                send(*logits, gl);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                eps,
            } => {
                let xv = self.value(*x);
                let gam = self.value(*gamma).data();
                let (_, cols) = xv.rows_cols();
                let mut gx = Vec::with_capacity(xv.numel());
                let mut gg = vec![0.0; cols];
                let mut gbeta = vec![0.0; cols];
                let mut xhat = vec![0.0; cols];
                let mut dxhat = vec![0.0; cols];
                for (row, grow) in xv.data().chunks(cols).zip(g.chunks(cols)) {
                    let (mean, inv_std) = row_moments(row, *eps);
                    for j in 0..cols {
                        xhat[j] = (row[j] - mean) * inv_std;
                        dxhat[j] = grow[j] * gam[j];
                        gg[j] += grow[j] * xhat[j];
                        gbeta[j] += grow[j];
                    }
                    let m1 = dxhat.iter().sum::<f64>() / cols as f64;
                    let m2 = kernels::dot(&dxhat, &xhat) / cols as f64;
                    gx.extend((0..cols).map(|j| inv_std * (dxhat[j] - m1 - xhat[j] * m2)));
                }
                send(*x, gx);
                send(*gamma, gg);
                send(*beta, gbeta);
            }
            Op::Gather { table, ids } => {
                let tv = self.value(*table);
                let (_, cols) = rank2(tv)?;
                let mut gt = vec![0.0; tv.numel()];
                for (&i, grow) in ids.iter().zip(g.chunks(cols)) {
                    gt[i * cols..(i + 1) * cols]
                        .iter_mut()
                        .zip(grow)
                        .for_each(|(o, v)| *o += v);
                }
                send(*table, gt);
            }
            Op::PhmImplicit { a, s, x } => {
                let dims = phm_kernel::Dims::from_shapes(self.shape(*a), self.shape(*s))?;
                let xv = self.value(*x);
                let (batch, _) = xv.rows_cols();
                let grads_out = phm_kernel::backward(
                    &dims,
                    self.value(*a).data(),
                    self.value(*s).data(),
                    xv.data(),
                    batch,
                    g,
                    self.needs_grad(*x),
                );
                send(*a, grads_out.a);
                send(*s, grads_out.s);
                if let Some(gx) = grads_out.x {
                    send(*x, gx);
                }
            }
        }
        Ok(())
    }
}

fn op_inputs(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf(_) => vec![],
        Op::MatMul(a, b) | Op::Kron(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
            vec![*a, *b]
        }
        Op::AddBias(x, b) => vec![*x, *b],
        Op::Transpose(x)
        | Op::Scale(x, _)
        | Op::Act(x, _)
        | Op::Softmax(x)
        | Op::Reshape(x)
        | Op::Sum(x)
        | Op::Mean(x) => vec![*x],
        Op::SliceCols { x, .. } | Op::SliceRows { x, .. } | Op::Select { x, .. } => vec![*x],
        Op::ConcatCols(p) | Op::ConcatRows(p) => p.clone(),
        Op::Mse { pred, .. } => vec![*pred],
        Op::CrossEntropy { logits, .. } => vec![*logits],
        Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        Op::Gather { table, .. } => vec![*table],
        Op::PhmImplicit { a, s, x } => vec![*a, *s, *x],
    }
}

fn rank2(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        &[r, c] => Ok((r, c)),
        s => Err(PhmError::Rank {
            expected: 2,
            actual: s.len(),
        }),
    }
}

fn softmax_row(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn row_moments(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}
