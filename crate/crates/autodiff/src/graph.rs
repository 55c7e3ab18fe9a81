use rand::Rng;

use crate::attention::{self, AttentionSaved, Segment};
use crate::norm::{self, BatchNormStats, NormSaved};
use crate::tensor::{dot, gemm_acc, gemm_nt_acc, gemm_tn_acc};
use crate::{Error, Result, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Train/eval switch for dropout and batch normalisation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Sigmoid,
    Relu,
    LeakyRelu(f64),
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    L2Norm,
    /// Elementwise `max(0, x)`; kept with the reductions because it only
    /// ever closes a hinge.
    Max0,
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(Binary, Var, Var),
    AddRow(Var, Var),
    Scale(Var, Var),
    MulConst(Var, f64),
    Unary(Unary, Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    ReduceAll(Reduce, Var),
    ReduceRows(Reduce, Var),
    ConcatCols(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    GatherRows {
        x: Var,
        index: Vec<usize>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        saved: NormSaved,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        saved: NormSaved,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        saved: AttentionSaved,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Linear tape of recorded tensor ops.
///
/// Nodes are appended in execution order, so every op sits after its
/// inputs; [`Graph::backward`] walks the tape in exact reverse.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, rg)
    }

    /// Trainable input: receives a gradient on backward.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass, if `v` received one.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient as a tensor shaped like `v`; zeros when nothing flowed in.
    pub fn grad_tensor(&self, v: Var) -> Tensor {
        let shape = self.shape(v).to_vec();
        match self.grad(v) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("grad shape"),
            None => Tensor::zeros(&shape),
        }
    }

    /// Attention weights (before dropout) saved by an [`Graph::query_attention`]
    /// node, laid out `[segment row][head]`.
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { saved, .. } => Some(&saved.weights),
            _ => None,
        }
    }

    fn dims2(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a);
        let (k2, n) = self.dims2(b);
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        Ok(self.push_op(Tensor::matrix(m, n, out), Op::MatMul(a, b), &[a, b]))
    }

    pub fn binary(&mut self, op: Binary, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op: "elementwise",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let data: Vec<f64> = match op {
            Binary::Add => x.iter().zip(y).map(|(p, q)| p + q).collect(),
            Binary::Sub => x.iter().zip(y).map(|(p, q)| p - q).collect(),
            Binary::Mul => x.iter().zip(y).map(|(p, q)| p * q).collect(),
        };
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push_op(t, Op::Binary(op, a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    /// `x + bias` with a `1 × n` bias broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims2(x);
        if self.shape(bias) != [1, n] {
            return Err(Error::Shape {
                op: "add_row",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n) {
            for (o, &bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        Ok(self.push_op(Tensor::matrix(m, n, data), Op::AddRow(x, bias), &[x, bias]))
    }

    /// `x * s` for a `1 × 1` scalar variable `s`.
    pub fn scale(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(Error::Shape {
                op: "scale",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(s).to_vec(),
            });
        }
        let sv = self.value(s).item();
        let data = self.value(x).data().iter().map(|v| v * sv).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.push_op(t, Op::Scale(x, s), &[x, s]))
    }

    pub fn mul_const(&mut self, x: Var, c: f64) -> Var {
        let data = self.value(x).data().iter().map(|v| v * c).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data).expect("shape");
        self.push_op(t, Op::MulConst(x, c), &[x])
    }

    pub fn unary(&mut self, op: Unary, x: Var) -> Var {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| match op {
                Unary::Sigmoid => sigmoid(v),
                Unary::Relu => v.max(0.0),
                Unary::LeakyRelu(slope) => {
                    if v > 0.0 {
                        v
                    } else {
                        slope * v
                    }
                }
                Unary::Square => v * v,
            })
            .collect();
        let t = Tensor::new(self.shape(x).to_vec(), data).expect("shape");
        self.push_op(t, Op::Unary(op, x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(Unary::Relu, x)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(Unary::LeakyRelu(slope), x)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(Unary::Square, x)
    }

    pub fn max0(&mut self, x: Var) -> Var {
        self.reduce(Reduce::Max0, x)
    }

    /// Softmax along `axis` (0 = down columns, 1 = along rows) of a rank-2
    /// tensor, computed with max-subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (m, n) = self.dims2(x);
        if axis > 1 {
            return Err(Error::Shape {
                op: "softmax axis",
                lhs: self.shape(x).to_vec(),
                rhs: vec![axis],
            });
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; m * n];
        let (lanes, len, stride, step) = lanes(m, n, axis);
        let mut buf = vec![0.0; len];
        for lane in 0..lanes {
            let base = lane * step;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = src[base + i * stride];
            }
            softmax_in_place(&mut buf);
            for (i, &b) in buf.iter().enumerate() {
                out[base + i * stride] = b;
            }
        }
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push_op(t, Op::Softmax { x, axis }, &[x]))
    }

    /// Reduction over all elements to a `1 × 1` tensor (`Max0` stays elementwise).
    pub fn reduce(&mut self, op: Reduce, x: Var) -> Var {
        let d = self.value(x).data();
        let t = match op {
            Reduce::Sum => Tensor::scalar(d.iter().sum()),
            Reduce::Mean => Tensor::scalar(d.iter().sum::<f64>() / d.len() as f64),
            Reduce::L2Norm => Tensor::scalar(dot(d, d).sqrt()),
            Reduce::Max0 => {
                let data = d.iter().map(|v| v.max(0.0)).collect();
                Tensor::new(self.shape(x).to_vec(), data).expect("shape")
            }
        };
        self.push_op(t, Op::ReduceAll(op, x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        self.reduce(Reduce::Sum, x)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        self.reduce(Reduce::Mean, x)
    }

    /// Per-row reduction of an `m × n` tensor to `m × 1`.
    pub fn reduce_rows(&mut self, op: Reduce, x: Var) -> Var {
        if op == Reduce::Max0 {
            return self.reduce(op, x);
        }
        let (m, n) = self.dims2(x);
        let d = self.value(x).data();
        let out = d
            .chunks(n)
            .map(|r| match op {
                Reduce::Sum => r.iter().sum(),
                Reduce::Mean => r.iter().sum::<f64>() / n as f64,
                Reduce::L2Norm => dot(r, r).sqrt(),
                Reduce::Max0 => unreachable!(),
            })
            .collect();
        self.push_op(Tensor::matrix(m, 1, out), Op::ReduceRows(op, x), &[x])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::InvalidShape(vec![0]));
        };
        let m = self.dims2(first).0;
        let widths: Vec<usize> = parts.iter().map(|&p| self.dims2(p).1).collect();
        for &p in parts {
            if self.dims2(p).0 != m {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        Ok(self.push_op(Tensor::matrix(m, total, out), Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Rows `start..end` of `x`.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.dims2(x);
        if start >= end || end > m {
            return Err(Error::Shape {
                op: "slice_rows",
                lhs: self.shape(x).to_vec(),
                rhs: vec![start, end],
            });
        }
        let data = self.value(x).data()[start * n..end * n].to_vec();
        Ok(self.push_op(Tensor::matrix(end - start, n, data), Op::SliceRows { x, start }, &[x]))
    }

    /// Row `i` of the output is row `index[i]` of `x`.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let (m, n) = self.dims2(x);
        if index.is_empty() || index.iter().any(|&i| i >= m) {
            return Err(Error::Shape {
                op: "gather_rows",
                lhs: self.shape(x).to_vec(),
                rhs: vec![index.len()],
            });
        }
        let mut out = Vec::with_capacity(index.len() * n);
        for &i in index {
            out.extend_from_slice(self.value(x).row_slice(i));
        }
        Ok(self.push_op(
            Tensor::matrix(index.len(), n, out),
            Op::GatherRows {
                x,
                index: index.to_vec(),
            },
            &[x],
        ))
    }

    /// Inverted dropout. Identity in eval mode or for `p == 0`; in train mode
    /// each element survives with probability `1 - p` and is scaled by
    /// `1 / (1 - p)`. Mask draws come from `rng` in row-major order.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        let mask = dropout_mask(self.value(x).numel(), p, mode, rng)?;
        let Some(mask) = mask else {
            return Ok(x);
        };
        self.apply_mask(x, mask)
    }

    /// Multiply by a precomputed mask, recorded as a dropout node.
    pub fn apply_mask(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(x).numel() {
            return Err(Error::Shape {
                op: "dropout mask",
                lhs: self.shape(x).to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let data = self.value(x).data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.push_op(t, Op::Dropout { x, mask }, &[x]))
    }

    /// Batch normalisation over the rows of `x: B × d` with learnable
    /// `gamma`, `beta` of shape `1 × d`.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, stats: &mut BatchNormStats, mode: Mode) -> Result<Var> {
        let (b, d) = self.dims2(x);
        for p in [gamma, beta] {
            if self.shape(p) != [1, d] {
                return Err(Error::Shape {
                    op: "batch_norm affine",
                    lhs: self.shape(x).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        if stats.width() != d {
            return Err(Error::Shape {
                op: "batch_norm stats",
                lhs: self.shape(x).to_vec(),
                rhs: vec![stats.width()],
            });
        }
        let (out, saved) = norm::batch_norm_forward(
            self.value(x).data(),
            b,
            d,
            self.value(gamma).data(),
            self.value(beta).data(),
            stats,
            mode,
        )?;
        Ok(self.push_op(
            Tensor::matrix(b, d, out),
            Op::BatchNorm { x, gamma, beta, saved },
            &[x, gamma, beta],
        ))
    }

    /// Per-row layer normalisation with learnable `1 × d` affine.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (m, d) = self.dims2(x);
        for p in [gamma, beta] {
            if self.shape(p) != [1, d] {
                return Err(Error::Shape {
                    op: "layer_norm affine",
                    lhs: self.shape(x).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let (out, saved) = norm::layer_norm_forward(
            self.value(x).data(),
            m,
            d,
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        Ok(self.push_op(
            Tensor::matrix(m, d, out),
            Op::LayerNorm { x, gamma, beta, saved },
            &[x, gamma, beta],
        ))
    }

    /// Multi-head single-query attention over ragged segment lists.
    ///
    /// `q` is `B × (heads·head_dim)`, one query per item; `k` and `v` are
    /// `S × (heads·head_dim)` with the rows of item `b` given by
    /// `segments[b]`. Per item and head the weights are
    /// `softmax(q·kᵗ / √head_dim)` over that item's rows; the optional
    /// `mask` (length `S·heads`, layout `[row][head]`) multiplies the
    /// weights without renormalising, and the output row is the weighted
    /// sum of value rows, heads concatenated.
    pub fn query_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        segments: &[Segment],
        heads: usize,
        mask: Option<Vec<f64>>,
    ) -> Result<Var> {
        let (out, saved) = attention::forward(self.value(q), self.value(k), self.value(v), segments, heads, mask)?;
        Ok(self.push_op(out, Op::Attention { q, k, v, saved }, &[q, k, v]))
    }

    /// Reverse pass from a scalar `loss`. Gradients of all previous
    /// backward passes are cleared first; repeated uses of a value
    /// accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.numel();
        let slot = self.grads[v.0].get_or_insert_with(|| vec![0.0; n]);
        f(slot);
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        // The op is moved out while its inputs are updated and restored below.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims2(*a);
                let n = self.dims2(*b).1;
                if self.requires_grad(*a) {
                    let bv = self.value(*b).data().to_vec();
                    self.acc(*a, |da| gemm_nt_acc(g, &bv, da, m, n, k));
                }
                if self.requires_grad(*b) {
                    let av = self.value(*a).data().to_vec();
                    self.acc(*b, |db| gemm_tn_acc(&av, g, db, m, k, n));
                }
            }
            Op::Binary(kind, a, b) => match kind {
                Binary::Add => {
                    self.acc(*a, |d| add_into(d, g));
                    self.acc(*b, |d| add_into(d, g));
                }
                Binary::Sub => {
                    self.acc(*a, |d| add_into(d, g));
                    self.acc(*b, |d| d.iter_mut().zip(g).for_each(|(o, gv)| *o -= gv));
                }
                Binary::Mul => {
                    let av = self.value(*a).data().to_vec();
                    let bv = self.value(*b).data().to_vec();
                    self.acc(*a, |d| {
                        for ((o, gv), y) in d.iter_mut().zip(g).zip(&bv) {
                            *o += gv * y;
                        }
                    });
                    self.acc(*b, |d| {
                        for ((o, gv), x) in d.iter_mut().zip(g).zip(&av) {
                            *o += gv * x;
                        }
                    });
                }
            },
            Op::AddRow(x, bias) => {
                let n = self.dims2(*x).1;
                self.acc(*x, |d| add_into(d, g));
                self.acc(*bias, |d| {
                    for row in g.chunks(n) {
                        add_into(d, row);
                    }
                });
            }
            Op::Scale(x, s) => {
                let sv = self.value(*s).item();
                let xv = self.value(*x).data().to_vec();
                self.acc(*x, |d| d.iter_mut().zip(g).for_each(|(o, gv)| *o += gv * sv));
                self.acc(*s, |d| d[0] += dot(g, &xv));
            }
            Op::MulConst(x, c) => {
                let c = *c;
                self.acc(*x, |d| d.iter_mut().zip(g).for_each(|(o, gv)| *o += gv * c));
            }
            Op::Unary(kind, x) => {
                let xv = self.value(*x).data().to_vec();
                let yv = self.nodes[i].value.data().to_vec();
                let kind = *kind;
                self.acc(*x, |d| {
                    for j in 0..d.len() {
                        let local = match kind {
                            Unary::Sigmoid => yv[j] * (1.0 - yv[j]),
                            Unary::Relu => {
                                if xv[j] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::LeakyRelu(slope) => {
                                if xv[j] > 0.0 {
                                    1.0
                                } else {
                                    slope
                                }
                            }
                            Unary::Square => 2.0 * xv[j],
                        };
                        d[j] += g[j] * local;
                    }
                });
            }
            Op::Softmax { x, axis } => {
                let (m, n) = self.dims2(*x);
                let y = self.nodes[i].value.data().to_vec();
                let (lanes_n, len, stride, step) = lanes(m, n, *axis);
                self.acc(*x, |d| {
                    for lane in 0..lanes_n {
                        let base = lane * step;
                        let s: f64 = (0..len).map(|t| y[base + t * stride] * g[base + t * stride]).sum();
                        for t in 0..len {
                            let j = base + t * stride;
                            d[j] += y[j] * (g[j] - s);
                        }
                    }
                });
            }
            Op::ReduceAll(kind, x) => {
                let xv = self.value(*x).data().to_vec();
                let y = self.nodes[i].value.data().to_vec();
                let kind = *kind;
                self.acc(*x, |d| match kind {
                    Reduce::Sum => d.iter_mut().for_each(|o| *o += g[0]),
                    Reduce::Mean => {
                        let s = g[0] / d.len() as f64;
                        d.iter_mut().for_each(|o| *o += s);
                    }
                    Reduce::L2Norm => {
                        if y[0] > 0.0 {
                            let s = g[0] / y[0];
                            d.iter_mut().zip(&xv).for_each(|(o, xv)| *o += s * xv);
                        }
                    }
                    Reduce::Max0 => {
                        for j in 0..d.len() {
                            if xv[j] > 0.0 {
                                d[j] += g[j];
                            }
                        }
                    }
                });
            }
            Op::ReduceRows(kind, x) => {
                let n = self.dims2(*x).1;
                let xv = self.value(*x).data().to_vec();
                let y = self.nodes[i].value.data().to_vec();
                let kind = *kind;
                self.acc(*x, |d| {
                    for (r, row) in d.chunks_mut(n).enumerate() {
                        let s = match kind {
                            Reduce::Sum => g[r],
                            Reduce::Mean => g[r] / n as f64,
                            Reduce::L2Norm => {
                                if y[r] > 0.0 {
                                    g[r] / y[r]
                                } else {
                                    0.0
                                }
                            }
                            Reduce::Max0 => unreachable!(),
                        };
                        if kind == Reduce::L2Norm {
                            let xr = &xv[r * n..(r + 1) * n];
                            row.iter_mut().zip(xr).for_each(|(o, xv)| *o += s * xv);
                        } else {
                            row.iter_mut().for_each(|o| *o += s);
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = self.nodes[i].value.cols();
                let mut offset = 0;
                for &p in parts {
                    let (m, w) = self.dims2(p);
                    let off = offset;
                    self.acc(p, |d| {
                        for r in 0..m {
                            add_into(&mut d[r * w..(r + 1) * w], &g[r * total + off..r * total + off + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceRows { x, start } => {
                let n = self.dims2(*x).1;
                let s = *start * n;
                self.acc(*x, |d| add_into(&mut d[s..s + g.len()], g));
            }
            Op::GatherRows { x, index } => {
                let n = self.dims2(*x).1;
                self.acc(*x, |d| {
                    for (r, &src) in index.iter().enumerate() {
                        add_into(&mut d[src * n..(src + 1) * n], &g[r * n..(r + 1) * n]);
                    }
                });
            }
            Op::Dropout { x, mask } => {
                self.acc(*x, |d| {
                    for ((o, gv), m) in d.iter_mut().zip(g).zip(mask) {
                        *o += gv * m;
                    }
                });
            }
            Op::BatchNorm { x, gamma, beta, saved } => {
                let (b, dd) = self.dims2(*x);
                let gv = self.value(*gamma).data().to_vec();
                let grads = norm::batch_norm_backward(g, saved, &gv, b, dd);
                self.acc(*x, |d| add_into(d, &grads.dx));
                self.acc(*gamma, |d| add_into(d, &grads.dgamma));
                self.acc(*beta, |d| add_into(d, &grads.dbeta));
            }
            Op::LayerNorm { x, gamma, beta, saved } => {
                let (m, dd) = self.dims2(*x);
                let gv = self.value(*gamma).data().to_vec();
                let grads = norm::layer_norm_backward(g, saved, &gv, m, dd);
                self.acc(*x, |d| add_into(d, &grads.dx));
                self.acc(*gamma, |d| add_into(d, &grads.dgamma));
                self.acc(*beta, |d| add_into(d, &grads.dbeta));
            }
            Op::Attention { q, k, v, saved } => {
                let grads = attention::backward(g, self.value(*q), self.value(*k), self.value(*v), saved);
                self.acc(*q, |d| add_into(d, &grads.dq));
                self.acc(*k, |d| add_into(d, &grads.dk));
                self.acc(*v, |d| add_into(d, &grads.dv));
            }
        }
        self.nodes[i].op = op;
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Numerically stable logistic function.
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in x.iter_mut() {
        *v /= total;
    }
}

/// (lane count, lane length, element stride, lane start step) for a
/// softmax along `axis` of an `m × n` matrix.
fn lanes(m: usize, n: usize, axis: usize) -> (usize, usize, usize, usize) {
    if axis == 1 {
        (m, n, 1, n)
    } else {
        (n, m, n, 1)
    }
}

pub(crate) fn dropout_mask<R: Rng + ?Sized>(len: usize, p: f64, mode: Mode, rng: &mut R) -> Result<Option<Vec<f64>>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::DropoutProbability(p));
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok(None);
    }
    let keep = 1.0 / (1.0 - p);
    Ok(Some(
        (0..len)
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect(),
    ))
}

/// Draw an inverted-dropout mask of `len` entries, `None` when inactive.
pub fn sample_dropout_mask<R: Rng + ?Sized>(len: usize, p: f64, mode: Mode, rng: &mut R) -> Result<Option<Vec<f64>>> {
    dropout_mask(len, p, mode, rng)
}
