//! Huber loss, Adam with per-parameter freeze masks, the minibatch training
//! loop, two-phase transfer learning and a finite-difference gradient check.

use crate::dataset::WindowedDataset;
use crate::error::{Error, FieldDiff, Result};
use crate::numeric::Rng;
use crate::seq2seq::{Gradients, ModelConfig, ParamSet, Seq2SeqModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HuberConfig {
    pub delta: f64,
}

impl Default for HuberConfig {
    fn default() -> Self {
        HuberConfig { delta: 1.0 }
    }
}

impl HuberConfig {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::invalid(format!("Huber delta must be > 0, got {delta}")));
        }
        Ok(HuberConfig { delta })
    }
}

/// Mean Huber loss and its exact gradient w.r.t. `pred`.
pub fn huber(pred: &[f64], target: &[f64], cfg: &HuberConfig) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() {
        return Err(Error::shape("huber", pred.len(), target.len()));
    }
    if pred.is_empty() {
        return Err(Error::Empty("huber"));
    }
    let n = pred.len() as f64;
    let d = cfg.delta;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let e = p - t;
            if e.abs() <= d {
                loss += 0.5 * e * e;
                e / n
            } else {
                loss += d * (e.abs() - 0.5 * d);
                d * e.signum() / n
            }
        })
        .collect();
    Ok((loss / n, grad))
}

/// Per-parameter trainability flags; `true` means trainable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreezeMask {
    blocks: Vec<Vec<bool>>,
}

impl FreezeMask {
    pub fn from_fn(params: &ParamSet, mut f: impl FnMut(&str, usize) -> bool) -> Self {
        FreezeMask {
            blocks: params
                .blocks()
                .iter()
                .map(|b| (0..b.values.len()).map(|i| f(b.name, i)).collect())
                .collect(),
        }
    }

    pub fn all_trainable(params: &ParamSet) -> Self {
        Self::from_fn(params, |_, _| true)
    }

    pub fn all_frozen(params: &ParamSet) -> Self {
        Self::from_fn(params, |_, _| false)
    }

    /// Only the output layer trains.
    pub fn output_only(params: &ParamSet) -> Self {
        Self::from_fn(params, |name, _| name.starts_with("output."))
    }

    pub fn is_trainable(&self, block: usize, index: usize) -> bool {
        self.blocks[block][index]
    }

    fn congruent(&self, params: &ParamSet) -> bool {
        let blocks = params.blocks();
        self.blocks.len() == blocks.len()
            && self.blocks.iter().zip(&blocks).all(|(m, b)| m.len() == b.values.len())
    }

    /// True when nothing outside the output layer is trainable.
    fn body_frozen(&self, params: &ParamSet) -> bool {
        params
            .blocks()
            .iter()
            .zip(&self.blocks)
            .filter(|(b, _)| !b.name.starts_with("output."))
            .all(|(_, m)| m.iter().all(|t| !t))
    }
}

/// Adam moments and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ParamSet,
    pub v: ParamSet,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update restricted to trainable entries. Frozen
/// entries keep their value and their moments.
pub fn adam_step(model: &mut Seq2SeqModel, grads: &Gradients, state: &mut AdamState, mask: &FreezeMask) -> Result<()> {
    if !model.params.congruent(grads) || !model.params.congruent(&state.m) || !model.params.congruent(&state.v) {
        return Err(Error::invalid("adam_step: gradient or moment tree does not match the model"));
    }
    if !mask.congruent(&model.params) {
        return Err(Error::invalid("adam_step: freeze mask does not match the model"));
    }
    state.t += 1;
    let (b1, b2, eps, lr) = (state.beta1, state.beta2, state.eps, state.lr);
    let bc1 = 1.0 - b1.powf(state.t as f64);
    let bc2 = 1.0 - b2.powf(state.t as f64);
    let g_blocks = grads.blocks();
    let params = model.params.blocks_mut();
    let ms = state.m.blocks_mut();
    let vs = state.v.blocks_mut();
    for ((((p, g), m), v), flags) in params.into_iter().zip(&g_blocks).zip(ms).zip(vs).zip(&mask.blocks) {
        for i in 0..p.len() {
            if !flags[i] {
                continue;
            }
            let gi = g.values[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let step = lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
            if step != 0.0 {
                p[i] -= step;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch: 32,
            lr: 0.001,
            seed: 42,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::invalid(format!(
                "epochs and batch must be >= 1 (got {}, {})",
                self.epochs, self.batch
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Minibatch Adam training of every parameter. Returns the mean training
/// loss of each epoch.
pub fn train(model: &mut Seq2SeqModel, data: &WindowedDataset, cfg: &TrainConfig, loss: &HuberConfig) -> Result<Vec<f64>> {
    let mask = FreezeMask::all_trainable(&model.params);
    train_masked(model, data, cfg, loss, &mask)
}

/// Training with a freeze mask and fresh Adam moments.
pub fn train_masked(
    model: &mut Seq2SeqModel,
    data: &WindowedDataset,
    cfg: &TrainConfig,
    loss: &HuberConfig,
    mask: &FreezeMask,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_dataset(&model.config, data)?;
    if data.is_empty() {
        return Err(Error::Empty("train"));
    }
    let output_only = mask.body_frozen(&model.params);
    let mut rng = Rng::new(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut state = AdamState::new(&model.params, cfg.lr);
    let mut grads = model.params.zeros_like();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        if cfg.shuffle {
            rng.shuffle(&mut order);
        }
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch) {
            grads.clear();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let pass = model.forward(&data.inputs[i])?;
                let (l, mut g) = huber(&pass.predictions, &data.targets[i], loss)?;
                total += l;
                g.iter_mut().for_each(|v| *v *= scale);
                if output_only {
                    for (gy, feat) in g.iter().zip(pass.features()) {
                        grads.output.bias += gy;
                        crate::numeric::axpy(*gy, feat, &mut grads.output.weight);
                    }
                } else {
                    model.backward_into(&pass, &g, &mut grads)?;
                }
            }
            adam_step(model, &grads, &mut state, mask)?;
        }
        let epoch_loss = total / data.len() as f64;
        if !epoch_loss.is_finite() || !model.params.is_finite() {
            return Err(Error::NonFinite("training"));
        }
        history.push(epoch_loss);
    }
    Ok(history)
}

/// Mean Huber loss of the model over a dataset.
pub fn evaluate_loss(model: &Seq2SeqModel, data: &WindowedDataset, loss: &HuberConfig) -> Result<f64> {
    check_dataset(&model.config, data)?;
    if data.is_empty() {
        return Err(Error::Empty("evaluate_loss"));
    }
    let mut total = 0.0;
    for (x, y) in data.inputs.iter().zip(&data.targets) {
        total += huber(&model.predict(x)?, y, loss)?.0;
    }
    Ok(total / data.len() as f64)
}

fn check_dataset(cfg: &ModelConfig, data: &WindowedDataset) -> Result<()> {
    let mut diffs = Vec::new();
    if cfg.n_past != data.n_past {
        diffs.push(FieldDiff {
            field: "n_past",
            expected: cfg.n_past.to_string(),
            found: data.n_past.to_string(),
        });
    }
    if cfg.n_future != data.n_future {
        diffs.push(FieldDiff {
            field: "n_future",
            expected: cfg.n_future.to_string(),
            found: data.n_future.to_string(),
        });
    }
    if diffs.is_empty() {
        Ok(())
    } else {
        Err(Error::ConfigMismatch(diffs))
    }
}

/// Field-level comparison of two model configurations.
pub fn check_compatible(source: &ModelConfig, target: &ModelConfig) -> Result<()> {
    let mut diffs = Vec::new();
    let mut cmp = |field: &'static str, a: String, b: String| {
        if a != b {
            diffs.push(FieldDiff {
                field,
                expected: a,
                found: b,
            });
        }
    };
    cmp("n_past", source.n_past.to_string(), target.n_past.to_string());
    cmp("n_future", source.n_future.to_string(), target.n_future.to_string());
    cmp("hidden", source.hidden.to_string(), target.hidden.to_string());
    cmp("attention", source.attention.to_string(), target.attention.to_string());
    if diffs.is_empty() {
        Ok(())
    } else {
        Err(Error::ConfigMismatch(diffs))
    }
}

/// The two fine-tuning phases. Phase 1 trains only the new output layer;
/// phase 2 trains everything. A phase with zero epochs is skipped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferConfig {
    pub phase1: TrainConfig,
    pub phase2: TrainConfig,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            phase1: TrainConfig {
                epochs: 50,
                lr: 1e-3,
                ..TrainConfig::default()
            },
            phase2: TrainConfig {
                epochs: 50,
                lr: 1e-4,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct TransferOutcome {
    pub model: Seq2SeqModel,
    /// Snapshot taken between the two phases.
    pub after_phase1: Seq2SeqModel,
    pub phase1_loss: Vec<f64>,
    pub phase2_loss: Vec<f64>,
    /// Learning rate of each phase that ran, in order.
    pub lr_trace: Vec<f64>,
}

/// Adapts `source` to a target dataset: new output layer, frozen-body
/// training, then full fine-tuning. Each phase starts with fresh Adam moments.
pub fn transfer(
    source: &Seq2SeqModel,
    target: &WindowedDataset,
    cfg: &TransferConfig,
    loss: &HuberConfig,
) -> Result<TransferOutcome> {
    check_dataset(&source.config, target)?;
    if target.is_empty() {
        return Err(Error::Empty("transfer"));
    }
    let mut model = source.clone();
    model.reinit_output(&mut Rng::new(cfg.phase1.seed));
    let mut lr_trace = Vec::new();

    let mut phase1_loss = Vec::new();
    if cfg.phase1.epochs > 0 {
        let mask = FreezeMask::output_only(&model.params);
        phase1_loss = train_masked(&mut model, target, &cfg.phase1, loss, &mask)?;
        lr_trace.push(cfg.phase1.lr);
    }
    let after_phase1 = model.clone();

    let mut phase2_loss = Vec::new();
    if cfg.phase2.epochs > 0 {
        phase2_loss = train(&mut model, target, &cfg.phase2, loss)?;
        lr_trace.push(cfg.phase2.lr);
    }
    Ok(TransferOutcome {
        model,
        after_phase1,
        phase1_loss,
        phase2_loss,
        lr_trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Entries sampled per parameter block (all entries when the block is
    /// smaller).
    pub samples_per_block: usize,
    pub seed: u64,
    pub loss: HuberConfig,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-5,
            samples_per_block: 20,
            seed: 0,
            loss: HuberConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Block, index, analytic and numeric derivative of the worst entry.
    pub worst: (String, usize, f64, f64),
}

/// Magnitudes below this are compared absolutely; central differences with
/// `eps = 1e-5` carry roughly `1e-10` of truncation and rounding noise.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, GRAD_CHECK_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

/// Worst relative error between BPTT and central differences of the Huber
/// loss over a sample of parameters.
pub fn gradient_check(model: &Seq2SeqModel, window: &[f64], targets: &[f64], epsilon: f64) -> Result<f64> {
    let opts = GradCheckOptions {
        epsilon,
        ..GradCheckOptions::default()
    };
    Ok(gradient_check_with(model, window, targets, &opts)?.max_relative_error)
}

pub fn gradient_check_with(
    model: &Seq2SeqModel,
    window: &[f64],
    targets: &[f64],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    if !(opts.epsilon > 0.0 && opts.epsilon.is_finite()) {
        return Err(Error::invalid(format!("epsilon must be > 0, got {}", opts.epsilon)));
    }
    let pass = model.forward(window)?;
    let (_, g) = huber(&pass.predictions, targets, &opts.loss)?;
    let grads = model.backward(&pass, &g)?;
    let loss_at = |m: &Seq2SeqModel| -> Result<f64> { Ok(huber(&m.predict(window)?, targets, &opts.loss)?.0) };

    let mut rng = Rng::new(opts.seed);
    let mut probe = model.clone();
    let analytic = grads.blocks();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        worst: (String::new(), 0, 0.0, 0.0),
    };
    for (bi, block) in model.params.blocks().iter().enumerate() {
        let len = block.values.len();
        let mut indices: Vec<usize> = (0..len).collect();
        if len > opts.samples_per_block {
            rng.shuffle(&mut indices);
            indices.truncate(opts.samples_per_block);
        }
        for idx in indices {
            let orig = block.values[idx];
            probe.params.blocks_mut()[bi][idx] = orig + opts.epsilon;
            let plus = loss_at(&probe)?;
            probe.params.blocks_mut()[bi][idx] = orig - opts.epsilon;
            let minus = loss_at(&probe)?;
            probe.params.blocks_mut()[bi][idx] = orig;
            let numeric = (plus - minus) / (2.0 * opts.epsilon);
            let a = analytic[bi].values[idx];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_relative_error || report.checked == 1 {
                report.max_relative_error = err;
                report.worst = (block.name.to_string(), idx, a, numeric);
            }
        }
    }
    Ok(report)
}
