use alloc::vec;
use alloc::vec::Vec;

use super::kernels;
use super::tensor::{check_shape, numel, Tensor};
use crate::error::{bail, Error, Result};
use crate::math;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Tanh,
    Sigmoid,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    /// Non-overlapping 2x2 max over the two trailing axes.
    MaxPool2x2,
    /// `[C, H, W] -> [C]`.
    GlobalAvgPool,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Binary(Binary, Var, Var),
    Scale(Var, Var),
    Unary(Unary, Var),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    },
    Sum(Var),
    Mean(Var),
    MaxPool2x2 { input: Var, argmax: Vec<usize> },
    GlobalAvgPool(Var),
    Gather { input: Var, index: Vec<Option<usize>> },
    Reshape(Var),
    Concat(Vec<Var>),
    Lstm(kernels::LstmTape),
    BceWithLogits { logit: Var, target: f64 },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Tape of executed operations, recorded in execution order.
///
/// Every operation appends one node whose inputs already exist, so the node
/// list is a topological order and [`Graph::backward`] is a single reverse
/// sweep. Leaf gradients persist across `backward` calls and accumulate.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
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

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Every piecewise choice made on the tape: one 0/1 entry per ReLU input
    /// element and the selected index of every max-pool window. Two
    /// evaluations with equal patterns lie on the same smooth piece.
    pub fn decision_pattern(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Unary(Unary::Relu, x) => out.extend(self.value(*x).iter().map(|&v| usize::from(v > 0.0))),
                Op::MaxPool2x2 { argmax, .. } => out.extend_from_slice(argmax),
                _ => {}
            }
        }
        out
    }

    /// Binds a tensor as a leaf. Its `requires_grad` flag decides whether a
    /// gradient is collected for it.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf,
            t.requires_grad(),
        )
    }

    pub fn constant(&mut self, values: Vec<f64>, shape: &[usize]) -> Result<Var> {
        check_shape(values.len(), shape)?;
        Ok(self.push(shape.to_vec(), values, Op::Leaf, false))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    /// Gradient collected for a leaf by previous `backward` calls.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads[v.0].as_deref()
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::from_slice(&n.value, &n.shape).expect("graph nodes are well-formed")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            bail!(Shape, "matmul {:?} x {:?}", sa, sb);
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::matmul(self.value(a), self.value(b), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            bail!(Shape, "transpose needs a matrix, got {:?}", s);
        }
        let (m, n) = (s[0], s[1]);
        let x = self.value(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = x[i * n + j];
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(vec![n, m], out, Op::Transpose(a), rg))
    }

    pub fn unary(&mut self, kind: Unary, x: Var) -> Var {
        let f: fn(f64) -> f64 = match kind {
            Unary::Tanh => math::tanh,
            Unary::Sigmoid => math::sigmoid,
            Unary::Relu => |v| if v > 0.0 { v } else { 0.0 },
        };
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x]);
        self.push(shape, out, Op::Unary(kind, x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(Unary::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(Unary::Relu, x)
    }

    /// Elementwise binary op; both operands must share a shape.
    pub fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            bail!(Shape, "{:?} of {:?} and {:?}", kind, self.shape(a), self.shape(b));
        }
        let (x, y) = (self.value(a), self.value(b));
        let out = match kind {
            Binary::Add => x.iter().zip(y).map(|(p, q)| p + q).collect(),
            Binary::Sub => x.iter().zip(y).map(|(p, q)| p - q).collect(),
            Binary::Mul => x.iter().zip(y).map(|(p, q)| p * q).collect(),
        };
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(shape, out, Op::Binary(kind, a, b), rg))
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

    /// `s * x` where `s` holds a single value. The only broadcast supported.
    pub fn scale(&mut self, s: Var, x: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            bail!(Shape, "scale factor must be a scalar, got {:?}", self.shape(s));
        }
        let k = self.scalar(s);
        let out = self.value(x).iter().map(|v| k * v).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[s, x]);
        Ok(self.push(shape, out, Op::Scale(s, x), rg))
    }

    /// Cross-correlation of `[C_in, H, W]` with `[C_out, C_in, kh, kw]` plus bias.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let geom = kernels::ConvGeom::new(
            self.shape(input),
            self.shape(kernel),
            self.shape(bias),
            stride,
            padding,
        )?;
        let out = kernels::conv2d_forward(
            &geom,
            self.value(input),
            self.value(kernel),
            self.value(bias),
        );
        let rg = self.rg(&[input, kernel, bias]);
        Ok(self.push(
            geom.out_shape(),
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            },
            rg,
        ))
    }

    pub fn reduce(&mut self, kind: Reduce, x: Var) -> Result<Var> {
        let rg = self.rg(&[x]);
        match kind {
            Reduce::Sum => {
                let s = self.value(x).iter().sum();
                Ok(self.push(vec![1], vec![s], Op::Sum(x), rg))
            }
            Reduce::Mean => {
                let v = self.value(x);
                let s = v.iter().sum::<f64>() / v.len() as f64;
                Ok(self.push(vec![1], vec![s], Op::Mean(x), rg))
            }
            Reduce::MaxPool2x2 => {
                let shape = self.shape(x).to_vec();
                if shape.len() < 2 {
                    bail!(Shape, "max_pool_2x2 needs at least 2 axes, got {:?}", shape);
                }
                let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
                if h % 2 != 0 || w % 2 != 0 {
                    bail!(Shape, "max_pool_2x2 needs even spatial extents, got {:?}", shape);
                }
                let (out, argmax) = kernels::max_pool_2x2(self.value(x), &shape);
                let mut out_shape = shape;
                let r = out_shape.len();
                out_shape[r - 2] = h / 2;
                out_shape[r - 1] = w / 2;
                Ok(self.push(out_shape, out, Op::MaxPool2x2 { input: x, argmax }, rg))
            }
            Reduce::GlobalAvgPool => {
                let shape = self.shape(x);
                if shape.len() != 3 {
                    bail!(Shape, "global_avg_pool needs [C, H, W], got {:?}", shape);
                }
                let c = shape[0];
                let plane = shape[1] * shape[2];
                let out = self
                    .value(x)
                    .chunks_exact(plane)
                    .map(|p| p.iter().sum::<f64>() / plane as f64)
                    .collect();
                Ok(self.push(vec![c], out, Op::GlobalAvgPool(x), rg))
            }
        }
    }

    /// `out[i] = x[index[i]]`, with `None` producing a zero that carries no gradient.
    pub fn gather(&mut self, x: Var, index: Vec<Option<usize>>, shape: &[usize]) -> Result<Var> {
        check_shape(index.len(), shape).map_err(|e| match e {
            Error::Construction(m) => Error::Shape(m),
            other => other,
        })?;
        let src = self.value(x);
        let mut out = Vec::with_capacity(index.len());
        for ix in &index {
            match *ix {
                Some(i) if i < src.len() => out.push(src[i]),
                Some(i) => bail!(Shape, "gather index {} out of range {}", i, src.len()),
                None => out.push(0.0),
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(shape.to_vec(), out, Op::Gather { input: x, index }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(x).len() || shape.contains(&0) {
            bail!(Shape, "cannot reshape {:?} to {:?}", self.shape(x), shape);
        }
        let value = self.value(x).to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(shape.to_vec(), value, Op::Reshape(x), rg))
    }

    /// Flat concatenation into a 1-D tensor.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            bail!(Shape, "concat of nothing");
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        let n = out.len();
        let rg = self.rg(parts);
        Ok(self.push(vec![n], out, Op::Concat(parts.to_vec()), rg))
    }

    /// Runs a single-input LSTM over `x` (shape `[T]`) and returns the final
    /// hidden state `[L]`. Gate order in `w`/`b` is input, forget, cell, output;
    /// each `w[q]` is `[L, 1 + L]` acting on `[x_t; h_{t-1}]`.
    pub fn lstm_sequence(&mut self, w: [Var; 4], b: [Var; 4], x: Var) -> Result<Var> {
        let hidden = self.shape(b[0])[0];
        for q in 0..4 {
            if self.shape(w[q]) != [hidden, hidden + 1] || self.shape(b[q]) != [hidden] {
                bail!(
                    Shape,
                    "lstm gate {} has weight {:?} and bias {:?}",
                    q,
                    self.shape(w[q]),
                    self.shape(b[q])
                );
            }
        }
        if self.shape(x).len() != 1 {
            bail!(Shape, "lstm input must be a 1-D sequence, got {:?}", self.shape(x));
        }
        let weights = [
            self.value(w[0]),
            self.value(w[1]),
            self.value(w[2]),
            self.value(w[3]),
        ];
        let biases = [
            self.value(b[0]),
            self.value(b[1]),
            self.value(b[2]),
            self.value(b[3]),
        ];
        let (h, tape) = kernels::lstm_forward(weights, biases, self.value(x), w, b, x);
        let mut inputs = Vec::with_capacity(9);
        inputs.extend_from_slice(&w);
        inputs.extend_from_slice(&b);
        inputs.push(x);
        let rg = self.rg(&inputs);
        Ok(self.push(vec![hidden], h, Op::Lstm(tape), rg))
    }

    /// Binary cross-entropy of a single logit against a 0/1 target, computed as
    /// `ln(1 + e^-|z|) + max(z, 0) - y z`.
    pub fn bce_with_logits(&mut self, logit: Var, target: f64) -> Result<Var> {
        if self.value(logit).len() != 1 {
            bail!(Shape, "bce needs a single logit, got {:?}", self.shape(logit));
        }
        let z = self.scalar(logit);
        let loss = math::ln_1p(math::exp(-z.abs())) + z.max(0.0) - target * z;
        let rg = self.rg(&[logit]);
        Ok(self.push(vec![1], vec![loss], Op::BceWithLogits { logit, target }, rg))
    }

    /// Reverse sweep from a scalar `loss`. Gradients of tracked leaves are
    /// added to whatever previous calls left there.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.node(loss).value.len() != 1 {
            bail!(Contract, "backward needs a scalar loss, got {:?}", self.shape(loss));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);
        let nodes = &self.nodes;

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let mut sink = Sink {
                nodes,
                grads: &mut grads,
            };
            match &node.op {
                Op::Leaf => {
                    match &mut self.leaf_grads[id] {
                        Some(buf) => buf.iter_mut().zip(&g).for_each(|(b, v)| *b += v),
                        slot => *slot = Some(g),
                    }
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                    let n = nodes[b.0].shape[1];
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    sink.with(*a, |da| kernels::matmul_grad_lhs(&g, bv, da, m, k, n));
                    sink.with(*b, |db| kernels::matmul_grad_rhs(av, &g, db, m, k, n));
                }
                Op::Transpose(a) => {
                    let (m, n) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                    sink.with(*a, |da| {
                        for i in 0..m {
                            for j in 0..n {
                                da[i * n + j] += g[j * m + i];
                            }
                        }
                    });
                }
                Op::Binary(kind, a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    match kind {
                        Binary::Add => {
                            sink.add(*a, &g);
                            sink.add(*b, &g);
                        }
                        Binary::Sub => {
                            sink.add(*a, &g);
                            sink.with(*b, |db| db.iter_mut().zip(&g).for_each(|(d, v)| *d -= v));
                        }
                        Binary::Mul => {
                            sink.with(*a, |da| {
                                for ((d, v), y) in da.iter_mut().zip(&g).zip(bv) {
                                    *d += v * y;
                                }
                            });
                            sink.with(*b, |db| {
                                for ((d, v), x) in db.iter_mut().zip(&g).zip(av) {
                                    *d += v * x;
                                }
                            });
                        }
                    }
                }
                Op::Scale(s, x) => {
                    let k = nodes[s.0].value[0];
                    let xv = &nodes[x.0].value;
                    sink.with(*s, |ds| ds[0] += g.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>());
                    sink.with(*x, |dx| dx.iter_mut().zip(&g).for_each(|(d, v)| *d += k * v));
                }
                Op::Unary(kind, x) => {
                    let y = &node.value;
                    let xv = &nodes[x.0].value;
                    sink.with(*x, |dx| match kind {
                        Unary::Tanh => {
                            for ((d, v), y) in dx.iter_mut().zip(&g).zip(y) {
                                *d += v * (1.0 - y * y);
                            }
                        }
                        Unary::Sigmoid => {
                            for ((d, v), y) in dx.iter_mut().zip(&g).zip(y) {
                                *d += v * y * (1.0 - y);
                            }
                        }
                        Unary::Relu => {
                            for ((d, v), x) in dx.iter_mut().zip(&g).zip(xv) {
                                if *x > 0.0 {
                                    *d += v;
                                }
                            }
                        }
                    });
                }
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    stride,
                    padding,
                } => {
                    let geom = kernels::ConvGeom::new(
                        &nodes[input.0].shape,
                        &nodes[kernel.0].shape,
                        &nodes[bias.0].shape,
                        *stride,
                        *padding,
                    )
                    .expect("validated at forward time");
                    let (iv, kv) = (&nodes[input.0].value, &nodes[kernel.0].value);
                    sink.with(*input, |d| kernels::conv2d_grad_input(&geom, &g, kv, d));
                    sink.with(*kernel, |d| kernels::conv2d_grad_kernel(&geom, &g, iv, d));
                    sink.with(*bias, |d| kernels::conv2d_grad_bias(&geom, &g, d));
                }
                Op::Sum(x) => sink.with(*x, |dx| dx.iter_mut().for_each(|d| *d += g[0])),
                Op::Mean(x) => {
                    let n = nodes[x.0].value.len() as f64;
                    sink.with(*x, |dx| dx.iter_mut().for_each(|d| *d += g[0] / n));
                }
                Op::MaxPool2x2 { input, argmax } => sink.with(*input, |dx| {
                    for (o, &i) in argmax.iter().enumerate() {
                        dx[i] += g[o];
                    }
                }),
                Op::GlobalAvgPool(x) => {
                    let s = &nodes[x.0].shape;
                    let plane = s[1] * s[2];
                    sink.with(*x, |dx| {
                        for (c, chunk) in dx.chunks_exact_mut(plane).enumerate() {
                            let v = g[c] / plane as f64;
                            chunk.iter_mut().for_each(|d| *d += v);
                        }
                    });
                }
                Op::Gather { input, index } => sink.with(*input, |dx| {
                    for (o, ix) in index.iter().enumerate() {
                        if let Some(i) = ix {
                            dx[*i] += g[o];
                        }
                    }
                }),
                Op::Reshape(x) => sink.add(*x, &g),
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = nodes[p.0].value.len();
                        sink.add(*p, &g[off..off + n]);
                        off += n;
                    }
                }
                Op::Lstm(tape) => {
                    let weights = [
                        nodes[tape.w[0].0].value.as_slice(),
                        &nodes[tape.w[1].0].value,
                        &nodes[tape.w[2].0].value,
                        &nodes[tape.w[3].0].value,
                    ];
                    let xs = &nodes[tape.x.0].value;
                    let grads = kernels::lstm_backward(tape, weights, xs, &g);
                    for q in 0..4 {
                        sink.add(tape.w[q], &grads.w[q]);
                        sink.add(tape.b[q], &grads.b[q]);
                    }
                    sink.add(tape.x, &grads.x);
                }
                Op::BceWithLogits { logit, target } => {
                    let p = math::sigmoid(nodes[logit.0].value[0]);
                    sink.with(*logit, |dz| dz[0] += g[0] * (p - target));
                }
            }
        }
        Ok(())
    }
}

struct Sink<'a> {
    nodes: &'a [Node],
    grads: &'a mut [Option<Vec<f64>>],
}

impl Sink<'_> {
    fn with(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        let buf = self.grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]);
        f(buf);
    }

    fn add(&mut self, v: Var, g: &[f64]) {
        self.with(v, |d| d.iter_mut().zip(g).for_each(|(a, b)| *a += b));
    }
}
