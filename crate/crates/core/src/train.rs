//! Mini-batch training with binary cross-entropy and Adam, plus the
//! checkpoint that captures everything needed to score new data.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::data::{Discretizer, Standardizer, WindowSample};
use crate::error::{bail, Error, Result};
use crate::eval::{auc, score_samples};
use crate::math;
use crate::model::{sample_loss, ModelConfig, ModelParams, PermutationPlan, Variant};
use crate::nn::{ParamStore, Session};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Reshuffle the training samples at the start of every epoch.
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            bail!(Config, "epochs must be at least 1");
        }
        if self.batch_size == 0 {
            bail!(Config, "batch_size must be at least 1");
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                bail!(Config, "{} must be in (0, 1), got {}", name, b);
            }
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            bail!(Config, "learning_rate must be finite and non-negative, got {}", self.learning_rate);
        }
        if !(self.epsilon > 0.0) {
            bail!(Config, "epsilon must be positive, got {}", self.epsilon);
        }
        Ok(())
    }
}

/// `-[y ln p + (1-y) ln(1-p)]` with `p = sigmoid(z)`, evaluated in `z`.
pub fn bce_loss(z: f64, y: f64) -> f64 {
    math::ln_1p(math::exp(-z.abs())) + z.max(0.0) - y * z
}

/// Adam moment buffers, one pair per parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of every trainable array.
///
/// `grads` holds one buffer per array in store order; arrays with
/// `requires_grad == false` are left untouched.
pub fn adam_step(store: &mut ParamStore, grads: &[Vec<f64>], state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if grads.len() != store.len() || state.m.len() != store.len() || state.v.len() != store.len() {
        bail!(
            Shape,
            "adam step over {} arrays with {} gradients and {} moment buffers",
            store.len(),
            grads.len(),
            state.m.len()
        );
    }
    for ((id, name, t), g) in store.iter().zip(grads) {
        let i = id.index();
        if g.len() != t.len() || state.m[i].len() != t.len() || state.v[i].len() != t.len() {
            bail!(Shape, "{}: gradient or moment length differs from {} values", name, t.len());
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - math::pow(cfg.beta1, t);
    let bc2 = 1.0 - math::pow(cfg.beta2, t);
    for (i, tensor) in store.tensors_mut().enumerate() {
        if !tensor.requires_grad() {
            continue;
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((p, &g), m), v) in tensor.data_mut().iter_mut().zip(&grads[i]).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= cfg.learning_rate * m_hat / (math::sqrt(v_hat) + cfg.epsilon);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean per-sample loss over the epoch.
    pub train_loss: f64,
    /// `None` when there is no validation data or it holds one class only.
    pub val_auc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
}

/// Mean-loss gradient over a batch, accumulated in store order.
fn batch_gradient(
    params: &ModelParams,
    plan: &PermutationPlan,
    samples: &[&WindowSample],
    variant: Variant,
    grads: &mut [Vec<f64>],
) -> Result<f64> {
    grads.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v = 0.0));
    let mut total = 0.0;
    for sample in samples {
        let mut s = Session::new(&params.store);
        let loss = sample_loss(&mut s, params, sample, plan, variant)?;
        let l = s.graph.scalar(loss);
        if !l.is_finite() {
            return Ok(l);
        }
        total += l;
        s.backward(loss)?;
        for (id, g) in s.into_grads() {
            for (acc, v) in grads[id.index()].iter_mut().zip(&g) {
                *acc += v;
            }
        }
    }
    let scale = 1.0 / samples.len() as f64;
    grads.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v *= scale));
    Ok(total)
}

/// [`train_with`] without a progress callback.
pub fn train(
    train_samples: &[WindowSample],
    val_samples: &[WindowSample],
    model_config: &ModelConfig,
    cfg: &TrainConfig,
    variant: Variant,
) -> Result<Trained> {
    train_with(train_samples, val_samples, model_config, cfg, variant, |_| {})
}

/// Trains from a fresh `(model_config, cfg.seed)` initialization for
/// `cfg.epochs` epochs and returns the final parameters.
///
/// Arrays the variant does not use are frozen. `on_epoch` sees each history
/// record as soon as it is complete.
pub fn train_with<F>(
    train_samples: &[WindowSample],
    val_samples: &[WindowSample],
    model_config: &ModelConfig,
    cfg: &TrainConfig,
    variant: Variant,
    mut on_epoch: F,
) -> Result<Trained>
where
    F: FnMut(&EpochRecord),
{
    cfg.validate()?;
    if train_samples.is_empty() {
        bail!(Data, "training set is empty");
    }
    let mut params = ModelParams::init(model_config, cfg.seed)?;
    params.restrict_to(variant);
    let plan = params.plan();
    let mut adam = AdamState::new(&params.store);
    let mut grads: Vec<Vec<f64>> = adam.m.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_samples.len()).collect();
    let val_labels: Vec<u8> = val_samples.iter().map(|s| s.label).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&WindowSample> = chunk.iter().map(|&i| &train_samples[i]).collect();
            let loss = batch_gradient(&params, &plan, &batch, variant, &mut grads)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, batch: b + 1 });
            }
            epoch_loss += loss;
            adam_step(&mut params.store, &grads, &mut adam, cfg)?;
        }
        let val_auc = if val_samples.is_empty() {
            None
        } else {
            let scores = score_samples(&params, val_samples, variant)?;
            match auc(&scores, &val_labels) {
                Ok(a) => Some(a),
                Err(Error::DegenerateLabels) => None,
                Err(e) => return Err(e),
            }
        };
        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss / train_samples.len() as f64,
            val_auc,
        };
        on_epoch(&record);
        history.push(record);
    }
    Ok(Trained { params, history })
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// A named parameter array stored at 32-bit precision.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ParamArray {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Everything needed to turn raw rows of the training schema into scores.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Checkpoint {
    pub format_version: u32,
    pub model_config: ModelConfig,
    pub standardizer: Standardizer,
    pub discretizer: Discretizer,
    pub permutation: PermutationPlan,
    pub params: BTreeMap<String, ParamArray>,
    pub feature_names: Vec<String>,
    /// Branch wiring the parameters were trained for.
    pub variant: Variant,
    pub seed: u64,
    pub final_epoch: usize,
}

impl Checkpoint {
    pub fn new(
        params: &ModelParams,
        standardizer: Standardizer,
        discretizer: Discretizer,
        feature_names: Vec<String>,
        variant: Variant,
        seed: u64,
        final_epoch: usize,
    ) -> Self {
        let arrays = params
            .store
            .iter()
            .map(|(_, name, t)| {
                let data = t.data().iter().map(|&v| v as f32).collect();
                (name.into(), ParamArray { shape: t.shape().to_vec(), data })
            })
            .collect();
        Self {
            format_version: CHECKPOINT_VERSION,
            model_config: params.config.clone(),
            standardizer,
            discretizer,
            permutation: params.plan(),
            params: arrays,
            feature_names,
            variant,
            seed,
            final_epoch,
        }
    }

    /// Checks every field against the model configuration and rebuilds the
    /// parameters.
    pub fn model(&self) -> Result<ModelParams> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::Version(self.format_version));
        }
        let c = &self.model_config;
        c.validate().map_err(|e| Error::Schema(alloc::format!("model_config: {e}")))?;
        let n = c.n_sensors;
        if self.permutation != PermutationPlan::new(n) {
            bail!(Schema, "permutation does not match the plan for {} sensors", n);
        }
        if self.standardizer.mean.len() != n || self.standardizer.sd.len() != n {
            bail!(Schema, "standardizer does not cover {} features", n);
        }
        if self.discretizer.edges.len() != n || self.discretizer.bins != c.bins {
            bail!(Schema, "discretizer does not match {} features with {} bins", n, c.bins);
        }
        self.discretizer.validate()?;
        if self.feature_names.len() != n {
            bail!(Schema, "{} feature names for {} sensors", self.feature_names.len(), n);
        }
        for (name, a) in &self.params {
            if a.shape.iter().product::<usize>() != a.data.len() {
                bail!(Shape, "{}: shape {:?} holds {} values", name, a.shape, a.data.len());
            }
        }
        ModelParams::from_arrays(
            c,
            self.params
                .iter()
                .map(|(name, a)| (name.as_str(), a.shape.as_slice(), a.data.iter().map(|&v| f64::from(v)).collect())),
        )
    }
}
