//! Parameter storage and the neural building blocks shared by both branches.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Tensor, Var};
use crate::error::{bail, Error, Result};
use crate::math;

/// Index of a named array in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named, trainable arrays.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {}", name);
        self.names.push(name);
        self.tensors.push(tensor.with_requires_grad(true));
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.tensors.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Adds per-parameter gradients (as returned by [`Session::into_grads`]).
    pub fn accumulate_grads(&mut self, grads: &[(ParamId, Vec<f64>)]) {
        for (id, g) in grads {
            self.tensors[id.0].accumulate_grad(g);
        }
    }

    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// One forward pass: a fresh graph plus lazily bound parameter leaves.
///
/// Parameters never touched by the forward pass are never bound, so they
/// receive no gradient.
pub struct Session<'p> {
    pub graph: Graph,
    store: &'p ParamStore,
    bound: Vec<Option<Var>>,
}

impl<'p> Session<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            graph: Graph::new(),
            store,
            bound: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.graph.leaf(self.store.get(id));
        self.bound[id.0] = Some(v);
        v
    }

    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.graph.backward(loss)
    }

    /// Gradients of every bound parameter that received one.
    pub fn into_grads(self) -> Vec<(ParamId, Vec<f64>)> {
        let mut out = Vec::new();
        for (i, v) in self.bound.iter().enumerate() {
            if let Some(v) = v {
                if let Some(g) = self.graph.grad(*v) {
                    out.push((ParamId(i), g.to_vec()));
                }
            }
        }
        out
    }
}

/// Seeded source of initial parameter values.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Bound `sqrt(6 / (fan_in + fan_out))` of the Glorot uniform scheme.
    pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
        math::sqrt(6.0 / (fan_in + fan_out) as f64)
    }

    pub fn uniform(&mut self, shape: &[usize], bound: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| self.rng.random_range(-bound..bound))
            .collect();
        Tensor::from_vec(data, shape).expect("positive extents")
    }

    pub fn glorot(&mut self, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
        self.uniform(shape, Self::glorot_bound(fan_in, fan_out))
    }

    pub fn filled(shape: &[usize], value: f64) -> Tensor {
        let mut t = Tensor::zeros(shape);
        t.data_mut().iter_mut().for_each(|v| *v = value);
        t
    }
}

/// One lookup table `[bins, width]` for a single sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingTable {
    pub table: ParamId,
    pub bins: usize,
    pub width: usize,
}

impl EmbeddingTable {
    pub const INIT_BOUND: f64 = 0.05;

    pub fn init(store: &mut ParamStore, name: &str, bins: usize, width: usize, init: &mut Initializer) -> Self {
        let table = store.add(name, init.uniform(&[bins, width], Self::INIT_BOUND));
        Self { table, bins, width }
    }
}

/// Weights of a single-input LSTM; gate order is input, forget, cell, output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LstmParams {
    pub w: [ParamId; 4],
    pub b: [ParamId; 4],
    pub hidden: usize,
}

impl LstmParams {
    pub const GATES: [&'static str; 4] = ["i", "f", "g", "o"];
    pub const FORGET_BIAS: f64 = 1.0;

    pub fn init(store: &mut ParamStore, prefix: &str, hidden: usize, init: &mut Initializer) -> Self {
        let mut w = [ParamId(0); 4];
        let mut b = [ParamId(0); 4];
        for (q, gate) in Self::GATES.iter().enumerate() {
            w[q] = store.add(
                alloc::format!("{prefix}.w_{gate}"),
                init.glorot(&[hidden, hidden + 1], hidden + 1, hidden),
            );
        }
        for (q, gate) in Self::GATES.iter().enumerate() {
            let value = if q == 1 { Self::FORGET_BIAS } else { 0.0 };
            b[q] = store.add(
                alloc::format!("{prefix}.b_{gate}"),
                Initializer::filled(&[hidden], value),
            );
        }
        Self { w, b, hidden }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_width: usize,
    pub out_width: usize,
}

impl LinearParams {
    pub fn init(store: &mut ParamStore, prefix: &str, in_width: usize, out_width: usize, init: &mut Initializer) -> Self {
        let weight = store.add(
            alloc::format!("{prefix}.weight"),
            init.glorot(&[out_width, in_width], in_width, out_width),
        );
        let bias = store.add(alloc::format!("{prefix}.bias"), Tensor::zeros(&[out_width]));
        Self {
            weight,
            bias,
            in_width,
            out_width,
        }
    }
}

/// Linear layers with ReLU between them and nothing after the last.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<LinearParams>,
}

impl MlpParams {
    pub fn init(store: &mut ParamStore, prefix: &str, widths: &[usize], init: &mut Initializer) -> Result<Self> {
        if widths.len() < 2 {
            bail!(Config, "an MLP needs at least an input and an output width");
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| LinearParams::init(store, &alloc::format!("{prefix}.{i}"), w[0], w[1], init))
            .collect();
        Ok(Self { layers })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conv2dParams {
    pub kernel: ParamId,
    pub bias: ParamId,
}

impl Conv2dParams {
    pub fn init(store: &mut ParamStore, prefix: &str, c_in: usize, c_out: usize, k: usize, init: &mut Initializer) -> Self {
        let kernel = store.add(
            alloc::format!("{prefix}.kernel"),
            init.glorot(&[c_out, c_in, k, k], c_in * k * k, c_out * k * k),
        );
        let bias = store.add(alloc::format!("{prefix}.bias"), Tensor::zeros(&[c_out]));
        Self { kernel, bias }
    }
}

/// Looks up one row per sensor and stacks them into `[N, E_s]`.
pub fn embed_frame(s: &mut Session<'_>, tables: &[EmbeddingTable], ids: &[usize]) -> Result<Var> {
    if tables.len() != ids.len() || tables.is_empty() {
        bail!(Shape, "{} embedding tables for a frame of {} ids", tables.len(), ids.len());
    }
    let width = tables[0].width;
    let mut rows = Vec::with_capacity(tables.len());
    for (k, (t, &id)) in tables.iter().zip(ids).enumerate() {
        if id >= t.bins {
            return Err(Error::Lookup {
                feature: k,
                id,
                bins: t.bins,
            });
        }
        let tv = s.param(t.table);
        let index = (id * width..(id + 1) * width).map(Some).collect();
        rows.push(s.graph.gather(tv, index, &[width])?);
    }
    let flat = s.graph.concat(&rows)?;
    s.graph.reshape(flat, &[tables.len(), width])
}

fn check_series(series: &[f64]) -> Result<()> {
    if series.is_empty() {
        bail!(Data, "LSTM input sequence is empty");
    }
    if let Some(i) = series.iter().position(|v| !v.is_finite()) {
        bail!(Data, "non-finite LSTM input {} at step {}", series[i], i);
    }
    Ok(())
}

/// Final hidden state `[L]` of the LSTM run over a scalar sequence.
pub fn lstm_encode(s: &mut Session<'_>, p: &LstmParams, series: &[f64]) -> Result<Var> {
    check_series(series)?;
    let x = s.graph.constant(series.to_vec(), &[series.len()])?;
    let w = p.w.map(|id| s.param(id));
    let b = p.b.map(|id| s.param(id));
    s.graph.lstm_sequence(w, b, x)
}

/// Same recurrence as [`lstm_encode`], spelled out step by step with
/// primitive graph ops. Slow; kept as an independent route for checking the
/// fused kernel.
pub fn lstm_encode_unrolled(s: &mut Session<'_>, p: &LstmParams, series: &[f64]) -> Result<Var> {
    check_series(series)?;
    let l = p.hidden;
    let w = p.w.map(|id| s.param(id));
    let b = p.b.map(|id| s.param(id));
    let g = &mut s.graph;
    let mut h = g.constant(vec![0.0; l], &[l])?;
    let mut c = g.constant(vec![0.0; l], &[l])?;
    for &xt in series {
        let x = g.constant(vec![xt], &[1])?;
        let xh = g.concat(&[x, h])?;
        let xh = g.reshape(xh, &[l + 1, 1])?;
        let mut gates = [h; 4];
        for q in 0..4 {
            let pre = g.matmul(w[q], xh)?;
            let pre = g.reshape(pre, &[l])?;
            let pre = g.add(pre, b[q])?;
            gates[q] = if q == 2 { g.tanh(pre) } else { g.sigmoid(pre) };
        }
        let keep = g.mul(gates[1], c)?;
        let write = g.mul(gates[0], gates[2])?;
        c = g.add(keep, write)?;
        let tc = g.tanh(c);
        h = g.mul(gates[3], tc)?;
    }
    Ok(h)
}

/// `weight · x + bias` for a 1-D `x`.
pub fn linear(s: &mut Session<'_>, p: &LinearParams, x: Var) -> Result<Var> {
    if s.graph.shape(x) != [p.in_width] {
        bail!(
            Shape,
            "linear layer expects [{}], got {:?}",
            p.in_width,
            s.graph.shape(x)
        );
    }
    let w = s.param(p.weight);
    let b = s.param(p.bias);
    let col = s.graph.reshape(x, &[p.in_width, 1])?;
    let y = s.graph.matmul(w, col)?;
    let y = s.graph.reshape(y, &[p.out_width])?;
    s.graph.add(y, b)
}

pub fn mlp(s: &mut Session<'_>, p: &MlpParams, x: Var) -> Result<Var> {
    let mut h = x;
    for (i, layer) in p.layers.iter().enumerate() {
        h = linear(s, layer, h)?;
        if i + 1 < p.layers.len() {
            h = s.graph.relu(h);
        }
    }
    Ok(h)
}
