//! The two-branch network: bilinear attention over sensors, convolution on
//! the attention matrix and on a permuted copy of it, an MLP residual path,
//! and a weighted fusion of the multi-sensor and time-series branches.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{relative_error, Graph, Reduce, Tensor, Var};
use crate::data::WindowSample;
use crate::error::{bail, Error, Result};
use crate::math;
use crate::nn::{
    self, Conv2dParams, EmbeddingTable, Initializer, LinearParams, LstmParams, MlpParams, ParamId,
    ParamStore, Session,
};

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ModelConfig {
    pub n_sensors: usize,
    pub window: usize,
    pub bins: usize,
    pub embed_width: usize,
    pub lstm_width: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub branch_width: usize,
    /// Divide `X·Xᵀ` by the row width before the tanh.
    pub attention_prescale: bool,
}

impl ModelConfig {
    pub const DEFAULT_WINDOW: usize = 120;
    pub const DEFAULT_BINS: usize = 64;

    /// Default widths for `n_sensors` sensors and the default window.
    pub fn new(n_sensors: usize) -> Self {
        Self {
            n_sensors,
            window: Self::DEFAULT_WINDOW,
            bins: Self::DEFAULT_BINS,
            embed_width: 16,
            lstm_width: 32,
            conv1_channels: 8,
            conv2_channels: 16,
            branch_width: 32,
            attention_prescale: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [
            ("n_sensors", self.n_sensors),
            ("embed_width", self.embed_width),
            ("lstm_width", self.lstm_width),
            ("conv1_channels", self.conv1_channels),
            ("conv2_channels", self.conv2_channels),
            ("branch_width", self.branch_width),
        ];
        for (name, v) in widths {
            if v == 0 {
                bail!(Config, "{} must be at least 1", name);
            }
        }
        if self.window < 2 {
            bail!(Config, "window must be at least 2, got {}", self.window);
        }
        if self.bins < 2 {
            bail!(Config, "bins must be at least 2, got {}", self.bins);
        }
        Ok(())
    }
}

/// Index map realizing `P = M·A·Mᵀ` as `P[i][j] = A[pi[i]][pi[j]]`, with
/// `pi[i] = i·stride mod n`.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct PermutationPlan {
    pub n: usize,
    pub pi: Vec<usize>,
    pub stride: usize,
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl PermutationPlan {
    /// Smallest stride `>= ceil(n/2)` coprime with `n` (1 when `n <= 2`).
    ///
    /// For n = 6 the only admissible stride is 5, which just reverses the
    /// order; adjacency is preserved there.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "permutation of an empty index set");
        let stride = if n <= 2 {
            1
        } else {
            (n.div_ceil(2)..)
                .find(|&s| gcd(s, n) == 1)
                .expect("n - 1 is always coprime")
        };
        let pi = (0..n).map(|i| (i * stride) % n).collect();
        Self { n, pi, stride }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            pi: (0..n).collect(),
            stride: 1,
        }
    }

    pub fn inverse(&self) -> Self {
        let mut pi = alloc::vec![0; self.n];
        for (i, &p) in self.pi.iter().enumerate() {
            pi[p] = i;
        }
        let stride = if self.n == 1 { 1 } else { pi[1] };
        Self {
            n: self.n,
            pi,
            stride,
        }
    }

    pub fn is_bijection(&self) -> bool {
        let mut seen = alloc::vec![false; self.n];
        self.pi.len() == self.n
            && self.pi.iter().all(|&p| p < self.n && !core::mem::replace(&mut seen[p], true))
    }

    pub fn validate(&self) -> Result<()> {
        if !self.is_bijection() {
            bail!(Schema, "permutation is not a bijection on 0..{}", self.n);
        }
        Ok(())
    }
}

/// `A = tanh(X·Xᵀ)`, or `tanh(X·Xᵀ / d)` with `prescale`.
pub fn bilinear_attention(g: &mut Graph, x: Var, prescale: bool) -> Result<Var> {
    if g.shape(x).len() != 2 {
        bail!(Shape, "attention input must be [n, d], got {:?}", g.shape(x));
    }
    let d = g.shape(x)[1];
    let xt = g.transpose(x)?;
    let mut s = g.matmul(x, xt)?;
    if prescale {
        let k = g.constant(alloc::vec![1.0 / d as f64], &[1])?;
        s = g.scale(k, s)?;
    }
    Ok(g.tanh(s))
}

pub fn permute_matrix(g: &mut Graph, a: Var, plan: &PermutationPlan) -> Result<Var> {
    let n = plan.n;
    if g.shape(a) != [n, n] {
        bail!(Shape, "plan of size {} applied to {:?}", n, g.shape(a));
    }
    let mut index = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            index.push(Some(plan.pi[i] * n + plan.pi[j]));
        }
    }
    g.gather(a, index, &[n, n])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvStack {
    pub conv1: Conv2dParams,
    pub conv2: Conv2dParams,
}

impl ConvStack {
    const KERNEL: usize = 3;
    const PAD: usize = 1;

    fn init(store: &mut ParamStore, prefix: &str, c1: usize, c2: usize, init: &mut Initializer) -> Self {
        Self {
            conv1: Conv2dParams::init(store, &format!("{prefix}.conv1"), 1, c1, Self::KERNEL, init),
            conv2: Conv2dParams::init(store, &format!("{prefix}.conv2"), c1, c2, Self::KERNEL, init),
        }
    }

    /// conv 3x3 -> relu -> 2x2 max pool -> conv 3x3 -> relu -> global mean.
    /// Odd sides get one zero row and column before pooling.
    fn forward(&self, s: &mut Session<'_>, m: Var) -> Result<Var> {
        let n = s.graph.shape(m)[0];
        let img = s.graph.reshape(m, &[1, n, n])?;
        let (k1, b1) = (s.param(self.conv1.kernel), s.param(self.conv1.bias));
        let h = s.graph.conv2d(img, k1, b1, 1, Self::PAD)?;
        let mut h = s.graph.relu(h);
        if n % 2 == 1 {
            let c = s.graph.shape(h)[0];
            let side = n + 1;
            let mut index = Vec::with_capacity(c * side * side);
            for ch in 0..c {
                for y in 0..side {
                    for x in 0..side {
                        index.push((y < n && x < n).then(|| (ch * n + y) * n + x));
                    }
                }
            }
            h = s.graph.gather(h, index, &[c, side, side])?;
        }
        let h = s.graph.reduce(Reduce::MaxPool2x2, h)?;
        let (k2, b2) = (s.param(self.conv2.kernel), s.param(self.conv2.bias));
        let h = s.graph.conv2d(h, k2, b2, 1, Self::PAD)?;
        let h = s.graph.relu(h);
        s.graph.reduce(Reduce::GlobalAvgPool, h)
    }
}

/// Parameters of one relation-extraction stack.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchParams {
    pub conv_a: ConvStack,
    pub conv_p: ConvStack,
    pub fc_merge: LinearParams,
    pub residual_mlp: MlpParams,
    pub gamma: ParamId,
    pub delta: ParamId,
}

impl BranchParams {
    fn init(store: &mut ParamStore, prefix: &str, rows: usize, cols: usize, cfg: &ModelConfig, init: &mut Initializer) -> Result<Self> {
        let (c1, c2, df) = (cfg.conv1_channels, cfg.conv2_channels, cfg.branch_width);
        Ok(Self {
            conv_a: ConvStack::init(store, &format!("{prefix}.conv_a"), c1, c2, init),
            conv_p: ConvStack::init(store, &format!("{prefix}.conv_p"), c1, c2, init),
            fc_merge: LinearParams::init(store, &format!("{prefix}.fc_merge"), 2 * c2, df, init),
            residual_mlp: MlpParams::init(store, &format!("{prefix}.residual"), &[rows * cols, df, df], init)?,
            gamma: store.add(format!("{prefix}.gamma"), Tensor::scalar(FUSION_INIT)),
            delta: store.add(format!("{prefix}.delta"), Tensor::scalar(FUSION_INIT)),
        })
    }
}

pub const FUSION_INIT: f64 = 0.5;

/// Attention, permuted CNN and residual MLP over a `[n, d]` feature matrix;
/// returns `gamma·u + delta·r` of width `D_f`.
pub fn relation_branch(
    s: &mut Session<'_>,
    x: Var,
    p: &BranchParams,
    plan: &PermutationPlan,
    prescale: bool,
) -> Result<Var> {
    let shape = s.graph.shape(x).to_vec();
    if shape.len() != 2 || shape[0] != plan.n {
        bail!(Shape, "branch input {:?} does not match a plan of size {}", shape, plan.n);
    }
    let a = bilinear_attention(&mut s.graph, x, prescale)?;
    let pm = permute_matrix(&mut s.graph, a, plan)?;
    let fa = p.conv_a.forward(s, a)?;
    let fp = p.conv_p.forward(s, pm)?;
    let both = s.graph.concat(&[fa, fp])?;
    let u = nn::linear(s, &p.fc_merge, both)?;
    let u = s.graph.relu(u);
    let flat = s.graph.reshape(x, &[shape[0] * shape[1]])?;
    let r = nn::mlp(s, &p.residual_mlp, flat)?;
    let (gamma, delta) = (s.param(p.gamma), s.param(p.delta));
    let u = s.graph.scale(gamma, u)?;
    let r = s.graph.scale(delta, r)?;
    s.graph.add(u, r)
}

/// Which branches feed the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(rename_all = "snake_case"))]
pub enum Variant {
    Full,
    MultiSensor,
    TimeSeries,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::MultiSensor, Variant::TimeSeries, Variant::Full];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::MultiSensor => "multi_sensor",
            Variant::TimeSeries => "time_series",
        }
    }

    pub fn uses(self, param_name: &str) -> bool {
        let ms = param_name.starts_with("embed.") || param_name.starts_with("ms.") || param_name == "alpha";
        let ts = param_name.starts_with("lstm.") || param_name.starts_with("ts.") || param_name == "beta";
        match self {
            Variant::Full => true,
            Variant::MultiSensor => !ts,
            Variant::TimeSeries => !ms,
        }
    }
}

/// All learnable arrays of the model plus the handles locating them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub embeddings: Vec<EmbeddingTable>,
    pub lstms: Vec<LstmParams>,
    pub ms_branch: BranchParams,
    pub ts_branch: BranchParams,
    pub alpha: ParamId,
    pub beta: ParamId,
    pub head: LinearParams,
}

impl ModelParams {
    /// Glorot-uniform weights, `U(-0.05, 0.05)` embeddings, zero biases
    /// (forget gates 1.0) and fusion weights 0.5. Depends only on
    /// `(config, seed)`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = config;
        let mut init = Initializer::new(seed);
        let mut store = ParamStore::new();
        let embeddings = (0..c.n_sensors)
            .map(|k| EmbeddingTable::init(&mut store, &format!("embed.{k}"), c.bins, c.embed_width, &mut init))
            .collect();
        let lstms = (0..c.n_sensors)
            .map(|k| LstmParams::init(&mut store, &format!("lstm.{k}"), c.lstm_width, &mut init))
            .collect();
        let ms_branch = BranchParams::init(&mut store, "ms", c.n_sensors, c.embed_width, c, &mut init)?;
        let ts_branch = BranchParams::init(&mut store, "ts", c.n_sensors, c.lstm_width, c, &mut init)?;
        let alpha = store.add("alpha", Tensor::scalar(FUSION_INIT));
        let beta = store.add("beta", Tensor::scalar(FUSION_INIT));
        let head = LinearParams::init(&mut store, "head", c.branch_width, 1, &mut init);
        Ok(Self {
            config: config.clone(),
            store,
            embeddings,
            lstms,
            ms_branch,
            ts_branch,
            alpha,
            beta,
            head,
        })
    }

    /// Rebuilds parameters from named arrays, checking every shape against
    /// the layout implied by `config`.
    pub fn from_arrays<'a, I>(config: &ModelConfig, arrays: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a [usize], Vec<f64>)>,
    {
        let mut params = Self::init(config, 0)?;
        let mut filled = alloc::vec![false; params.store.len()];
        for (name, shape, data) in arrays {
            let Some(id) = params.store.find(name) else {
                bail!(Schema, "unknown parameter array {}", name);
            };
            if params.store.get(id).shape() != shape || data.len() != params.store.get(id).len() {
                bail!(
                    Shape,
                    "{}: expected {:?}, found {:?} with {} values",
                    name,
                    params.store.get(id).shape(),
                    shape,
                    data.len()
                );
            }
            params.store.get_mut(id).data_mut().copy_from_slice(&data);
            filled[id.index()] = true;
        }
        if let Some(missing) = filled.iter().position(|f| !f) {
            let name: String = params.store.iter().nth(missing).map(|(_, n, _)| n.into()).unwrap_or_default();
            bail!(Schema, "missing parameter array {}", name);
        }
        Ok(params)
    }

    pub fn plan(&self) -> PermutationPlan {
        PermutationPlan::new(self.config.n_sensors)
    }

    /// Freezes every array the variant does not use.
    pub fn restrict_to(&mut self, variant: Variant) {
        let names: Vec<bool> = self.store.iter().map(|(_, n, _)| variant.uses(n)).collect();
        for (t, keep) in self.store.tensors_mut().zip(names) {
            t.set_requires_grad(keep);
        }
    }

    pub fn param_count(&self) -> usize {
        self.store.total_len()
    }
}

pub fn multi_sensor_forward(s: &mut Session<'_>, params: &ModelParams, ids: &[usize], plan: &PermutationPlan) -> Result<Var> {
    let e = nn::embed_frame(s, &params.embeddings, ids)?;
    relation_branch(s, e, &params.ms_branch, plan, params.config.attention_prescale)
}

/// `Et`, `[N, L_s]`: each column of the `[W_s, N]` row-major window goes
/// through its own LSTM.
pub fn time_series_features(s: &mut Session<'_>, params: &ModelParams, window: &[f64]) -> Result<Var> {
    let n = params.config.n_sensors;
    let w = params.config.window;
    if window.len() != w * n {
        bail!(Shape, "window holds {} values, expected [{}, {}]", window.len(), w, n);
    }
    let mut rows = Vec::with_capacity(n);
    let mut column = alloc::vec![0.0; w];
    for (k, lstm) in params.lstms.iter().enumerate() {
        for (t, v) in column.iter_mut().enumerate() {
            *v = window[t * n + k];
        }
        rows.push(nn::lstm_encode(s, lstm, &column)?);
    }
    let flat = s.graph.concat(&rows)?;
    s.graph.reshape(flat, &[n, params.config.lstm_width])
}

pub fn time_series_forward(s: &mut Session<'_>, params: &ModelParams, window: &[f64], plan: &PermutationPlan) -> Result<Var> {
    let et = time_series_features(s, params, window)?;
    relation_branch(s, et, &params.ts_branch, plan, params.config.attention_prescale)
}

fn check_sample(params: &ModelParams, sample: &WindowSample) -> Result<()> {
    let c = &params.config;
    if sample.n_sensors != c.n_sensors || sample.ids.len() != c.n_sensors {
        bail!(
            Shape,
            "sample has {} sensors, model expects {}",
            sample.n_sensors,
            c.n_sensors
        );
    }
    Ok(())
}

/// Scalar logit of the sample under the chosen variant.
pub fn model_logit(
    s: &mut Session<'_>,
    params: &ModelParams,
    sample: &WindowSample,
    plan: &PermutationPlan,
    variant: Variant,
) -> Result<Var> {
    check_sample(params, sample)?;
    let fused = match variant {
        Variant::Full => {
            let v_ms = multi_sensor_forward(s, params, &sample.ids, plan)?;
            let v_ts = time_series_forward(s, params, &sample.window, plan)?;
            let (alpha, beta) = (s.param(params.alpha), s.param(params.beta));
            let a = s.graph.scale(alpha, v_ms)?;
            let b = s.graph.scale(beta, v_ts)?;
            s.graph.add(a, b)?
        }
        Variant::MultiSensor => {
            let v_ms = multi_sensor_forward(s, params, &sample.ids, plan)?;
            let alpha = s.param(params.alpha);
            s.graph.scale(alpha, v_ms)?
        }
        Variant::TimeSeries => {
            let v_ts = time_series_forward(s, params, &sample.window, plan)?;
            let beta = s.param(params.beta);
            s.graph.scale(beta, v_ts)?
        }
    };
    nn::linear(s, &params.head, fused)
}

/// Anomaly probability from the full two-branch model.
pub fn model_forward(params: &ModelParams, sample: &WindowSample, plan: &PermutationPlan) -> Result<f64> {
    score(params, sample, plan, Variant::Full)
}

pub fn branch_only_forward(params: &ModelParams, sample: &WindowSample, plan: &PermutationPlan, which: Variant) -> Result<f64> {
    if which == Variant::Full {
        return Err(Error::Contract("branch_only_forward needs a single branch".into()));
    }
    score(params, sample, plan, which)
}

pub fn score(params: &ModelParams, sample: &WindowSample, plan: &PermutationPlan, variant: Variant) -> Result<f64> {
    let mut s = Session::new(&params.store);
    let z = model_logit(&mut s, params, sample, plan, variant)?;
    Ok(math::sigmoid(s.graph.scalar(z)))
}

/// BCE loss of one sample as a graph node.
pub fn sample_loss(
    s: &mut Session<'_>,
    params: &ModelParams,
    sample: &WindowSample,
    plan: &PermutationPlan,
    variant: Variant,
) -> Result<Var> {
    let z = model_logit(s, params, sample, plan, variant)?;
    s.graph.bce_with_logits(z, f64::from(sample.label))
}

/// `bce(z1, y) - bce(z0, y)` without cancellation:
/// `softplus(a) - softplus(b) = ln1p(expm1(a - b) * sigmoid(b))`.
pub fn bce_difference(z1: f64, z0: f64, y: f64) -> f64 {
    let dz = z1 - z0;
    math::ln_1p(math::expm1(dz) * math::sigmoid(z0)) - y * dz
}

/// Worst gradient disagreement found in one parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGradError {
    pub name: String,
    pub probed: usize,
    pub max_rel_error: f64,
    /// Probes where a central difference at `eps` would have crossed a
    /// ReLU / max-pool switch.
    pub kink_probes: usize,
}

/// Smallest step tried before a probe is declared to sit on a kink.
pub const MIN_PROBE_STEP: f64 = 1e-9;

/// Central-difference check of the sample loss against the tape gradient,
/// array by array.
///
/// Arrays with at most `max_probes` entries are checked everywhere. Larger
/// ones get half their probes on entries with a nonzero tape gradient and
/// half anywhere, both drawn with `seed`.
///
/// A difference quotient is only a derivative estimate when its probes stay
/// on the smooth piece containing the base point. When a central probe at
/// `eps` flips a ReLU or max-pool decision, the second-order one-sided
/// difference on the unaffected side is used instead; if both sides flip,
/// the step is divided by 10 (down to [`MIN_PROBE_STEP`]).
pub fn loss_grad_check(
    params: &ModelParams,
    sample: &WindowSample,
    variant: Variant,
    eps: f64,
    max_probes: usize,
    seed: u64,
) -> Result<Vec<ArrayGradError>> {
    if !(eps > 0.0) {
        bail!(Contract, "grad_check eps must be positive, got {}", eps);
    }
    let plan = params.plan();
    let mut s = Session::new(&params.store);
    let loss = sample_loss(&mut s, params, sample, &plan, variant)?;
    s.backward(loss)?;
    let base_pattern = s.graph.decision_pattern();
    let mut grads: Vec<Option<Vec<f64>>> = alloc::vec![None; params.store.len()];
    for (id, g) in s.into_grads() {
        grads[id.index()] = Some(g);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = params.clone();
    let mut out = Vec::new();
    for (id, name, t) in params.store.iter() {
        if !variant.uses(name) {
            continue;
        }
        let n = t.len();
        let analytic = grads[id.index()].clone().unwrap_or_else(|| alloc::vec![0.0; n]);
        let coords: Vec<usize> = if n <= max_probes {
            (0..n).collect()
        } else {
            let nonzero: Vec<usize> = (0..n).filter(|&i| analytic[i] != 0.0).collect();
            let k = (max_probes / 2).min(nonzero.len());
            let mut c: Vec<usize> = index::sample(&mut rng, nonzero.len(), k).into_iter().map(|i| nonzero[i]).collect();
            c.extend(index::sample(&mut rng, n, max_probes - k));
            c
        };
        // Probes return the logit; loss differences are formed from logit
        // differences so that they are not rounded to the loss's own ulp.
        let mut eval = |i: usize, x: f64| -> Result<(f64, bool)> {
            probe.store.get_mut(id).data_mut()[i] = x;
            let mut s = Session::new(&probe.store);
            let z = model_logit(&mut s, &probe, sample, &plan, variant)?;
            let result = (s.graph.scalar(z), s.graph.decision_pattern() == base_pattern);
            probe.store.get_mut(id).data_mut()[i] = t.data()[i];
            Ok(result)
        };
        let delta = |z1: f64, z0: f64| bce_difference(z1, z0, f64::from(sample.label));
        let mut worst = 0.0f64;
        let mut kinks = 0;
        for &i in &coords {
            let x0 = t.data()[i];
            let mut h = eps;
            let mut kinked = false;
            let numeric = loop {
                let (up, same_up) = eval(i, x0 + h)?;
                let (down, same_down) = eval(i, x0 - h)?;
                if (same_up && same_down) || h / 10.0 < MIN_PROBE_STEP {
                    break delta(up, down) / (2.0 * h);
                }
                kinked = true;
                // second-order one-sided difference on a side that stays smooth
                let (base, _) = eval(i, x0)?;
                if same_up {
                    let (up2, same_up2) = eval(i, x0 + 2.0 * h)?;
                    if same_up2 {
                        break (4.0 * delta(up, base) - delta(up2, base)) / (2.0 * h);
                    }
                }
                if same_down {
                    let (down2, same_down2) = eval(i, x0 - 2.0 * h)?;
                    if same_down2 {
                        break (4.0 * delta(base, down) - delta(base, down2)) / (2.0 * h);
                    }
                }
                h /= 10.0;
            };
            if kinked {
                kinks += 1;
            }
            worst = worst.max(relative_error(analytic[i], numeric));
        }
        out.push(ArrayGradError {
            name: name.into(),
            probed: coords.len(),
            max_rel_error: worst,
            kink_probes: kinks,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
