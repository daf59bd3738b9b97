//! The training protocol: class weighting, inverted dropout, Adam/RMSprop,
//! a validation-driven learning-rate schedule, and multi-run averaging.
//!
//! One epoch is a shuffled pass over the training split in mini-batches;
//! after each epoch the validation loss drives the schedule: following a
//! 10-epoch warmup, `patience_epochs` epochs without improvement halve the
//! learning rate, and training stops after `max_halvings` halvings or
//! `max_epochs` epochs. The best-on-validation parameters are checkpointed
//! in memory and restored at stop. Every random choice (shuffling, dropout
//! masks) comes from one seeded stream, so a run is a pure function of its
//! config and data.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{seq::SliceRandom, Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{metrics_report, Dataset, MetricsReport, Sample, Split};
use crate::error::{Error, Result};
use crate::numerics::{NodeId, Tape, Tensor};
use crate::tasks::Prediction;

/// Epochs before the schedule may halve (the schedule still tracks the
/// best validation loss during warmup).
pub const WARMUP_EPOCHS: usize = 10;

/// A validation loss must undercut the best by more than this to count as
/// an improvement; guards against float noise resetting the patience.
pub const IMPROVEMENT_TOL: f64 = 1e-6;

/// Training hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub patience_epochs: usize,
    pub max_halvings: usize,
    pub max_epochs: usize,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub seed: u64,
    pub n_runs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.001,
            patience_epochs: 10,
            max_halvings: 4,
            max_epochs: 500,
            optimizer: OptimizerKind::Adam,
            batch_size: 32,
            seed: 1,
            n_runs: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr0 <= 0.0 || self.lr0.is_nan() {
            return Err(Error::Config("lr0 must be positive".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.max_epochs < 1 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if self.patience_epochs < 1 {
            return Err(Error::Config("patience_epochs must be at least 1".into()));
        }
        if self.n_runs < 1 {
            return Err(Error::Config("n_runs must be at least 1".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Class weights
// ---------------------------------------------------------------------------

/// Per-output, per-class weights `w = ln(1 / frequency)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    pub per_output: Vec<Vec<f64>>,
}

impl ClassWeights {
    /// Unit weights (the plain unweighted loss).
    pub fn unit(arities: &[usize]) -> Self {
        ClassWeights {
            per_output: arities.iter().map(|&k| alloc::vec![1.0; k]).collect(),
        }
    }
}

/// The weighting formula: `w = ln(1 / frequency)` with the frequency
/// clamped into `[floor, 1 - floor]` so the weight stays finite and
/// strictly positive even for absent or constant classes.
pub fn frequency_weight(frequency: f64, floor: f64) -> f64 {
    -libm::log(frequency.clamp(floor, 1.0 - floor))
}

/// Class weights from the training split, with the frequency floor set to
/// `1/(2n)` for `n` training samples.
pub fn compute_class_weights(data: &Dataset) -> Result<ClassWeights> {
    let idx = data.split_indices(Split::Train);
    let n = idx.len();
    if n == 0 {
        return Err(Error::Usage("class weights need a nonempty training split".into()));
    }
    let floor = 1.0 / (2.0 * n as f64);
    let per_output = data
        .meta
        .arities
        .iter()
        .enumerate()
        .map(|(o, &k)| {
            let mut counts = alloc::vec![0usize; k];
            for &i in &idx {
                counts[data.samples[i].targets[o]] += 1;
            }
            counts
                .iter()
                .map(|&c| frequency_weight(c as f64 / n as f64, floor))
                .collect()
        })
        .collect();
    Ok(ClassWeights { per_output })
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

/// Training/evaluation switch carried through a forward pass. The
/// training phase owns the RNG stream that draws dropout masks.
pub enum Phase<'a> {
    Train { rng: &'a mut dyn RngCore },
    Eval,
}

/// Inverted dropout: in training mode each entry is zeroed with
/// probability `rate` and survivors are scaled by `1/(1-rate)`, so the
/// expectation matches the input. Identity when `rate` is 0 or in
/// evaluation mode.
pub fn apply_dropout(
    tape: &mut Tape,
    x: NodeId,
    rate: f64,
    rng: &mut dyn RngCore,
    eval: bool,
) -> Result<NodeId> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Usage(format!("dropout rate {rate} outside [0, 1)")));
    }
    if eval || rate == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - rate);
    let shape = tape.value(x).shape();
    let mask_data: Vec<f64> = (0..shape.0 * shape.1)
        .map(|_| {
            let u: f64 = rng.gen();
            if u < rate {
                0.0
            } else {
                keep
            }
        })
        .collect();
    let mask = tape.constant(Tensor::from_vec(shape.0, shape.1, mask_data)?);
    tape.hadamard(x, mask)
}

/// Phase-aware wrapper used inside model forwards.
pub fn dropout_node(tape: &mut Tape, x: NodeId, rate: f64, phase: &mut Phase) -> Result<NodeId> {
    match phase {
        Phase::Train { rng } => apply_dropout(tape, x, rate, &mut **rng, false),
        Phase::Eval => apply_dropout(tape, x, rate, &mut NoRng, true),
    }
}

/// Placeholder RNG for the eval path (never sampled).
struct NoRng;

impl RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("eval mode draws no randomness")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("eval mode draws no randomness")
    }
    fn fill_bytes(&mut self, _: &mut [u8]) {
        unreachable!("eval mode draws no randomness")
    }
    fn try_fill_bytes(&mut self, _: &mut [u8]) -> core::result::Result<(), rand::Error> {
        unreachable!("eval mode draws no randomness")
    }
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Rmsprop,
}

impl OptimizerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Rmsprop => "rmsprop",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "rmsprop" => Ok(OptimizerKind::Rmsprop),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const RMSPROP_DECAY: f64 = 0.9;
const EPS: f64 = 1e-8;

/// Per-parameter moment accumulators plus the current learning rate
/// (`lr0 / 2^halvings`).
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimizerKind,
    lr0: f64,
    halvings: usize,
    step: usize,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, tensors: &[(String, &Tensor)], lr0: f64) -> Self {
        let zeros: Vec<Tensor> = tensors
            .iter()
            .map(|(_, t)| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        OptimizerState {
            kind,
            lr0,
            halvings: 0,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr0 / libm::exp2(self.halvings as f64)
    }

    pub fn halvings(&self) -> usize {
        self.halvings
    }

    pub fn halve(&mut self) {
        self.halvings += 1;
    }

    /// One update over all parameters. Adam uses beta1 0.9, beta2 0.999,
    /// eps 1e-8 with bias correction; RMSprop uses decay 0.9, eps 1e-8.
    /// A non-finite gradient aborts with a diagnostic naming the tensor.
    pub fn step(
        &mut self,
        params: &mut [(String, &mut Tensor)],
        grads: &[Tensor],
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Usage(format!(
                "{} gradient tensors for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for ((name, _), g) in params.iter().zip(grads.iter()) {
            if !g.all_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite gradient for `{name}`"
                )));
            }
        }
        self.step += 1;
        let lr = self.lr();
        match self.kind {
            OptimizerKind::Adam => {
                let bc1 = 1.0 - libm::pow(ADAM_BETA1, self.step as f64);
                let bc2 = 1.0 - libm::pow(ADAM_BETA2, self.step as f64);
                for (k, ((_, p), g)) in params.iter_mut().zip(grads.iter()).enumerate() {
                    let m = self.m[k].data_mut();
                    let v = self.v[k].data_mut();
                    let pd = p.data_mut();
                    for j in 0..g.len() {
                        let gj = g.data()[j];
                        m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * gj;
                        v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * gj * gj;
                        let m_hat = m[j] / bc1;
                        let v_hat = v[j] / bc2;
                        pd[j] -= lr * m_hat / (libm::sqrt(v_hat) + EPS);
                    }
                }
            }
            OptimizerKind::Rmsprop => {
                for (k, ((_, p), g)) in params.iter_mut().zip(grads.iter()).enumerate() {
                    let v = self.v[k].data_mut();
                    let pd = p.data_mut();
                    for j in 0..g.len() {
                        let gj = g.data()[j];
                        v[j] = RMSPROP_DECAY * v[j] + (1.0 - RMSPROP_DECAY) * gj * gj;
                        pd[j] -= lr * gj / (libm::sqrt(v[j]) + EPS);
                    }
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Learning-rate schedule
// ---------------------------------------------------------------------------

/// Verdict after one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue,
    /// Halve the learning rate and reset the patience counter.
    Halve,
    /// Terminate (the final halving, if the stop was triggered by one, is
    /// counted in the schedule state).
    Stop,
}

/// Running state of the schedule; a pure function of the validation-loss
/// history and the config.
#[derive(Debug, Clone, Default)]
pub struct ScheduleState {
    best: Option<f64>,
    counter: usize,
    halvings: usize,
    improved_last: bool,
}

impl ScheduleState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn halvings(&self) -> usize {
        self.halvings
    }

    /// Whether the most recent epoch improved the best validation loss.
    pub fn improved_last(&self) -> bool {
        self.improved_last
    }
}

/// Schedule update for the latest epoch (`history` holds one validation
/// loss per completed epoch, the current one last). After the warmup, a
/// full patience window without improvement emits [`Decision::Halve`];
/// the `max_halvings`-th halving and reaching `max_epochs` both emit
/// [`Decision::Stop`].
pub fn lr_schedule_step(
    history: &[f64],
    state: &mut ScheduleState,
    cfg: &TrainConfig,
) -> Result<Decision> {
    let epoch = history.len();
    if epoch == 0 {
        return Err(Error::Usage("schedule stepped with empty history".into()));
    }
    let val = history[epoch - 1];
    let improved = match state.best {
        None => true,
        Some(best) => val < best - IMPROVEMENT_TOL,
    };
    state.improved_last = improved;
    if improved {
        state.best = Some(val);
    }

    let mut decision = Decision::Continue;
    if epoch > WARMUP_EPOCHS {
        if improved {
            state.counter = 0;
        } else {
            state.counter += 1;
            if state.counter >= cfg.patience_epochs {
                state.halvings += 1;
                state.counter = 0;
                decision = if state.halvings >= cfg.max_halvings {
                    Decision::Stop
                } else {
                    Decision::Halve
                };
            }
        }
    }
    if epoch >= cfg.max_epochs {
        decision = Decision::Stop;
    }
    Ok(decision)
}

/// Replays the schedule over a full validation-loss history, returning the
/// per-epoch decision and cumulative halving count.
pub fn replay_schedule(history: &[f64], cfg: &TrainConfig) -> Result<Vec<(Decision, usize)>> {
    let mut state = ScheduleState::new();
    let mut out = Vec::with_capacity(history.len());
    for e in 1..=history.len() {
        let d = lr_schedule_step(&history[..e], &mut state, cfg)?;
        out.push((d, state.halvings()));
        if d == Decision::Stop {
            break;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// The training loop
// ---------------------------------------------------------------------------

/// Anything the trainer can optimize: it exposes its parameters in a
/// stable order, builds a batch loss whose trainable leaves are exactly
/// those parameters (registered in the same order), and predicts.
pub trait Model: Clone {
    fn tensors(&self) -> Vec<(String, &Tensor)>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)>;
    fn batch_loss(
        &self,
        tape: &mut Tape,
        samples: &[&Sample],
        weights: &ClassWeights,
        phase: &mut Phase,
    ) -> Result<NodeId>;
    fn predict(&self, sample: &Sample) -> Result<Prediction>;
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
    /// Cumulative halvings after this epoch's schedule decision.
    pub halvings: usize,
}

/// Outcome of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub halvings: usize,
    /// Set when training aborted on a non-finite loss or gradient; the
    /// model still holds the best checkpoint reached before the abort.
    pub diverged: Option<String>,
    /// Log-clamp events seen while building losses.
    pub clamp_events: usize,
}

/// Mean loss of a list of samples in evaluation mode.
fn split_loss<M: Model>(
    model: &M,
    data: &Dataset,
    idx: &[usize],
    weights: &ClassWeights,
    batch_size: usize,
) -> Result<(f64, usize)> {
    let mut total = 0.0;
    let mut clamps = 0usize;
    for chunk in idx.chunks(batch_size) {
        let samples: Vec<&Sample> = chunk.iter().map(|&i| &data.samples[i]).collect();
        let mut tape = Tape::new();
        let loss = model.batch_loss(&mut tape, &samples, weights, &mut Phase::Eval)?;
        total += tape.value(loss).data()[0] * samples.len() as f64;
        clamps += tape.clamp_events();
    }
    Ok((total / idx.len() as f64, clamps))
}

/// Runs the full protocol: shuffled mini-batches, per-epoch validation,
/// the halving schedule, and best-checkpoint restore. On divergence the
/// run aborts and the model is restored to the last good checkpoint.
pub fn train<M: Model>(model: &mut M, data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    data.validate()?;
    let train_idx = data.split_indices(Split::Train);
    let val_idx = data.split_indices(Split::Validation);
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::Usage(
            "training needs nonempty train and validation splits".into(),
        ));
    }
    let weights = compute_class_weights(data)?;
    let mut opt = OptimizerState::new(cfg.optimizer, &model.tensors(), cfg.lr0);
    let mut sched = ScheduleState::new();
    // Separate stream from parameter init so that model seeding and batch
    // order cannot alias.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);

    let mut best_model = model.clone();
    let mut best_epoch = 0usize;
    let mut records: Vec<EpochRecord> = Vec::new();
    let mut val_history: Vec<f64> = Vec::new();
    let mut diverged = None;
    let mut clamp_events = 0usize;

    'epochs: for epoch in 1..=cfg.max_epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut rng);
        let lr_used = opt.lr();
        let mut loss_sum = 0.0;

        for chunk in order.chunks(cfg.batch_size) {
            let samples: Vec<&Sample> = chunk.iter().map(|&i| &data.samples[i]).collect();
            let mut tape = Tape::new();
            let loss = model.batch_loss(
                &mut tape,
                &samples,
                &weights,
                &mut Phase::Train { rng: &mut rng },
            )?;
            let loss_value = tape.value(loss).data()[0];
            if !loss_value.is_finite() {
                diverged = Some(format!("non-finite loss at epoch {epoch}"));
                break 'epochs;
            }
            loss_sum += loss_value * samples.len() as f64;
            tape.backward(loss)?;
            let grads: Vec<Tensor> = tape
                .param_nodes()
                .iter()
                .map(|&id| tape.grad(id).clone())
                .collect();
            clamp_events += tape.clamp_events();
            drop(tape);
            let mut params = model.tensors_mut();
            if let Err(Error::Divergence(msg)) = opt.step(&mut params, &grads) {
                diverged = Some(format!("{msg} at epoch {epoch}"));
                break 'epochs;
            }
        }

        let train_loss = loss_sum / train_idx.len() as f64;
        let (val_loss, val_clamps) = split_loss(model, data, &val_idx, &weights, cfg.batch_size)?;
        clamp_events += val_clamps;
        val_history.push(val_loss);

        let decision = lr_schedule_step(&val_history, &mut sched, cfg)?;
        if sched.improved_last() {
            best_model = model.clone();
            best_epoch = epoch;
        }
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr: lr_used,
            halvings: sched.halvings(),
        });
        match decision {
            Decision::Continue => {}
            Decision::Halve => opt.halve(),
            Decision::Stop => break,
        }
    }

    *model = best_model;
    Ok(TrainReport {
        epochs: records,
        best_epoch,
        best_val_loss: sched.best().unwrap_or(f64::INFINITY),
        halvings: sched.halvings(),
        diverged,
        clamp_events,
    })
}

/// Full-model gradient check: the analytic gradient of the batch loss
/// (evaluation mode, so no dropout randomness) against central finite
/// differences for every scalar parameter. Returns the worst relative
/// error `|analytic - numeric| / max(1, |analytic|)`.
pub fn model_grad_check<M: Model>(
    model: &M,
    samples: &[&Sample],
    weights: &ClassWeights,
    step: f64,
) -> Result<f64> {
    if step <= 0.0 {
        return Err(Error::Usage("model_grad_check: step must be positive".into()));
    }
    let mut tape = Tape::new();
    let loss = model.batch_loss(&mut tape, samples, weights, &mut Phase::Eval)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = tape
        .param_nodes()
        .iter()
        .map(|&id| tape.grad(id).clone())
        .collect();
    let n_params = model.tensors().len();
    if analytic.len() != n_params {
        return Err(Error::Usage(format!(
            "model registered {} leaves but exposes {} tensors",
            analytic.len(),
            n_params
        )));
    }

    let eval_at = |m: &M| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = m.batch_loss(&mut tape, samples, weights, &mut Phase::Eval)?;
        Ok(tape.value(loss).data()[0])
    };

    let mut worst = 0.0f64;
    let mut probe = model.clone();
    for (k, grad) in analytic.iter().enumerate() {
        for j in 0..grad.len() {
            let orig = probe.tensors()[k].1.data()[j];
            probe.tensors_mut()[k].1.data_mut()[j] = orig + step;
            let plus = eval_at(&probe)?;
            probe.tensors_mut()[k].1.data_mut()[j] = orig - step;
            let minus = eval_at(&probe)?;
            probe.tensors_mut()[k].1.data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = grad.data()[j];
            let rel = libm::fabs(a - numeric) / libm::fabs(a).max(1.0);
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}

/// Hard predictions of a split scored against its targets.
pub fn evaluate<M: Model>(model: &M, data: &Dataset, split: Split) -> Result<MetricsReport> {
    let idx = data.split_indices(split);
    if idx.is_empty() {
        return Err(Error::Usage(format!("empty {} split", split.as_str())));
    }
    let mut preds = Vec::with_capacity(idx.len());
    for &i in &idx {
        preds.push(model.predict(&data.samples[i])?.hard());
    }
    let targets = data.split_targets(split);
    metrics_report(&preds, &targets, &data.meta.arities)
}

/// Aggregate metrics over repeated runs.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiRunReport {
    pub metrics: Vec<MetricsReport>,
    pub reports: Vec<TrainReport>,
    pub mean_micro_f1: f64,
    pub std_micro_f1: f64,
    pub mean_hamming: f64,
    pub std_hamming: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, libm::sqrt(var))
}

/// Trains `n_runs` models that differ only by derived seeds
/// `seed + 0 .. seed + n - 1` and reports mean and standard deviation of
/// the test metrics.
pub fn multi_run<M, F>(
    factory: F,
    data: &Dataset,
    cfg: &TrainConfig,
    eval_split: Split,
) -> Result<MultiRunReport>
where
    M: Model,
    F: Fn(u64) -> Result<M>,
{
    cfg.validate()?;
    let mut metrics = Vec::with_capacity(cfg.n_runs);
    let mut reports = Vec::with_capacity(cfg.n_runs);
    for k in 0..cfg.n_runs {
        let seed = cfg.seed + k as u64;
        let mut model = factory(seed)?;
        let mut run_cfg = cfg.clone();
        run_cfg.seed = seed;
        reports.push(train(&mut model, data, &run_cfg)?);
        metrics.push(evaluate(&model, data, eval_split)?);
    }
    let f1s: Vec<f64> = metrics.iter().map(|m| m.micro_f1).collect();
    let hls: Vec<f64> = metrics.iter().map(|m| m.hamming_loss).collect();
    let (mean_micro_f1, std_micro_f1) = mean_std(&f1s);
    let (mean_hamming, std_hamming) = mean_std(&hls);
    Ok(MultiRunReport {
        metrics,
        reports,
        mean_micro_f1,
        std_micro_f1,
        mean_hamming,
        std_hamming,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, DatasetMeta, FeatureVec, SynthKind, SynthSpec};
    use crate::tasks::{ClbModel, TaskKind, TaskSpec};
    use crate::bundle::{Activation, BundleConfig};
    use alloc::vec;

    #[test]
    fn weight_formula_anchors() {
        let floor = 1.0 / 200.0;
        assert!((frequency_weight(0.5, floor) - core::f64::consts::LN_2).abs() < 1e-12);
        assert!((frequency_weight(1.0 / core::f64::consts::E, floor) - 1.0).abs() < 1e-12);
        // Never-observed class with n = 100: floored at 1/200.
        assert!((frequency_weight(0.0, floor) - libm::log(200.0)).abs() < 1e-12);
    }

    fn weight_dataset() -> Dataset {
        // 4 train samples; label frequency of class 1 is exactly 0.5.
        let mk = |t: usize| Sample {
            parts: vec![FeatureVec::Dense(vec![0.0])],
            targets: vec![t],
            bag: false,
        };
        Dataset {
            meta: DatasetMeta {
                part_dims: vec![1],
                arities: vec![2],
                bags: false,
            },
            samples: vec![mk(1), mk(0), mk(1), mk(0)],
            splits: vec![Split::Train; 4],
        }
    }

    #[test]
    fn class_weights_from_data() {
        let w = compute_class_weights(&weight_dataset()).unwrap();
        assert!((w.per_output[0][0] - core::f64::consts::LN_2).abs() < 1e-12);
        assert!((w.per_output[0][1] - core::f64::consts::LN_2).abs() < 1e-12);
        // All weights strictly positive even for constant labels.
        let mut d = weight_dataset();
        for s in &mut d.samples {
            s.targets[0] = 1;
        }
        let w = compute_class_weights(&d).unwrap();
        assert!(w.per_output[0].iter().all(|&x| x > 0.0 && x.is_finite()));
        // Absent class gets the floored weight ln(2n).
        assert!((w.per_output[0][0] - libm::log(8.0)).abs() < 1e-12);
    }

    #[test]
    fn empty_training_split_is_an_error() {
        let mut d = weight_dataset();
        d.splits = vec![Split::Test; 4];
        assert!(compute_class_weights(&d).is_err());
    }

    #[test]
    fn adam_fixed_point_and_first_step() {
        let mut p = Tensor::vector(&[1.0, -2.0]);
        let zero = Tensor::zeros(2, 1);
        let named = vec![(String::from("p"), &p)];
        let mut opt = OptimizerState::new(OptimizerKind::Adam, &named, 0.05);
        drop(named);
        let before = p.clone();
        let mut params = vec![(String::from("p"), &mut p)];
        opt.step(&mut params, &[zero.clone()]).unwrap();
        drop(params);
        assert_eq!(p, before);

        // Unit gradient: bias correction makes the first step ~ -lr.
        let mut p = Tensor::vector(&[1.0, -2.0]);
        let named = vec![(String::from("p"), &p)];
        let mut opt = OptimizerState::new(OptimizerKind::Adam, &named, 0.05);
        drop(named);
        let ones = Tensor::ones(2, 1);
        let mut params = vec![(String::from("p"), &mut p)];
        opt.step(&mut params, &[ones]).unwrap();
        drop(params);
        assert!((p.data()[0] - (1.0 - 0.05)).abs() < 1e-6);
        assert!((p.data()[1] - (-2.0 - 0.05)).abs() < 1e-6);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        // 200 steps on f(w) = ||w||^2 from w = 1.
        let mut w = Tensor::ones(4, 1);
        let named = vec![(String::from("w"), &w)];
        let mut opt = OptimizerState::new(OptimizerKind::Adam, &named, 0.05);
        drop(named);
        for _ in 0..200 {
            let grad = w.map(|v| 2.0 * v);
            let mut params = vec![(String::from("w"), &mut w)];
            opt.step(&mut params, &[grad]).unwrap();
        }
        assert!(w.norm() < 1e-3, "norm {}", w.norm());
    }

    #[test]
    fn rmsprop_minimizes_a_quadratic() {
        let mut w = Tensor::ones(4, 1);
        let named = vec![(String::from("w"), &w)];
        let mut opt = OptimizerState::new(OptimizerKind::Rmsprop, &named, 0.01);
        drop(named);
        for _ in 0..400 {
            let grad = w.map(|v| 2.0 * v);
            let mut params = vec![(String::from("w"), &mut w)];
            opt.step(&mut params, &[grad]).unwrap();
        }
        // RMSprop keeps stepping ~lr near the optimum; close is enough.
        assert!(w.norm() < 5.0 * 0.01, "norm {}", w.norm());
    }

    #[test]
    fn non_finite_gradient_aborts_with_a_diagnostic() {
        let mut p = Tensor::vector(&[1.0]);
        let named = vec![(String::from("p"), &p)];
        let mut opt = OptimizerState::new(OptimizerKind::Adam, &named, 0.05);
        drop(named);
        let bad = Tensor::vector(&[f64::NAN]);
        let mut params = vec![(String::from("p"), &mut p)];
        let err = opt.step(&mut params, &[bad]).unwrap_err();
        assert!(matches!(err, Error::Divergence(_)));
    }

    #[test]
    fn lr_follows_halvings_exactly() {
        let p = Tensor::vector(&[1.0]);
        let named = vec![(String::from("p"), &p)];
        let mut opt = OptimizerState::new(OptimizerKind::Adam, &named, 0.4);
        for h in 0..5 {
            assert_eq!(opt.lr(), 0.4 / libm::exp2(h as f64));
            opt.halve();
        }
    }

    #[test]
    fn dropout_identity_cases() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(&[1.0, 2.0]));
        // rate 0 in training mode
        let y = apply_dropout(&mut tape, x, 0.0, &mut rng, false).unwrap();
        assert_eq!(x, y);
        // eval mode regardless of rate
        let y = apply_dropout(&mut tape, x, 0.9, &mut rng, true).unwrap();
        assert_eq!(x, y);
        // invalid rate
        assert!(apply_dropout(&mut tape, x, 1.0, &mut rng, false).is_err());
    }

    #[test]
    fn dropout_preserves_expectation() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let n = 100_000usize;
        let mut sum = 0.0;
        for _ in 0..n / 100 {
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::ones(100, 1));
            let y = apply_dropout(&mut tape, x, 0.5, &mut rng, false).unwrap();
            sum += tape.value(y).data().iter().sum::<f64>();
        }
        let mean = sum / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    fn flat_cfg() -> TrainConfig {
        TrainConfig::default()
    }

    #[test]
    fn flat_validation_halves_at_20_30_40_50_and_stops() {
        let cfg = flat_cfg();
        let history = vec![1.0; 60];
        let steps = replay_schedule(&history, &cfg).unwrap();
        assert_eq!(steps.len(), 50);
        for (e, (d, h)) in steps.iter().enumerate() {
            let epoch = e + 1;
            match epoch {
                20 => assert_eq!((*d, *h), (Decision::Halve, 1)),
                30 => assert_eq!((*d, *h), (Decision::Halve, 2)),
                40 => assert_eq!((*d, *h), (Decision::Halve, 3)),
                50 => assert_eq!((*d, *h), (Decision::Stop, 4)),
                _ => assert_eq!(*d, Decision::Continue, "epoch {epoch}"),
            }
        }
    }

    #[test]
    fn improvement_resets_patience() {
        let cfg = flat_cfg();
        // Flat except an improvement at epoch 19.
        let mut history = vec![1.0; 40];
        history[18] = 0.5;
        let steps = replay_schedule(&history, &cfg).unwrap();
        let halves: Vec<usize> = steps
            .iter()
            .enumerate()
            .filter(|(_, (d, _))| *d == Decision::Halve)
            .map(|(e, _)| e + 1)
            .collect();
        assert_eq!(halves.first(), Some(&29));
    }

    #[test]
    fn strictly_improving_runs_to_max_epochs() {
        let mut cfg = flat_cfg();
        cfg.max_epochs = 120;
        let history: Vec<f64> = (0..200).map(|e| 1.0 - 0.004 * e as f64).collect();
        let steps = replay_schedule(&history, &cfg).unwrap();
        assert_eq!(steps.len(), 120);
        assert!(steps[..119].iter().all(|(d, _)| *d == Decision::Continue));
        assert_eq!(steps[119].0, Decision::Stop);
        assert_eq!(steps[119].1, 0);
    }

    #[test]
    fn schedule_is_replayable_and_pure() {
        let cfg = flat_cfg();
        let history = [0.9, 0.8, 0.7, 0.7, 0.7, 0.72, 0.7, 0.69, 0.69, 0.69, 0.7, 0.7];
        let a = replay_schedule(&history, &cfg).unwrap();
        let b = replay_schedule(&history, &cfg).unwrap();
        assert_eq!(a, b);
    }

    fn tiny_model_and_data(seed: u64) -> (ClbModel, Dataset) {
        let data = gen_synthetic(&SynthSpec::new(SynthKind::MultiOutputCorrelated, 60), 42).unwrap();
        let task = TaskSpec {
            kind: TaskKind::MultiOutput,
            inputs: vec![10],
            outputs: vec![2, 2, 2],
            projection_dim: None,
            use_label_embedding: false,
            bags: false,
        };
        let cfg = BundleConfig {
            n_layers: 3,
            d_central: 8,
            d_mini: 4,
            n_minicolumns: 3,
            activation: Activation::Relu,
            ..BundleConfig::default()
        };
        (ClbModel::new(cfg, task, seed).unwrap(), data)
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let run = || {
            let (mut model, data) = tiny_model_and_data(7);
            let mut cfg = TrainConfig::default();
            cfg.max_epochs = 8;
            cfg.seed = 7;
            let report = train(&mut model, &data, &cfg).unwrap();
            (report, model)
        };
        let (ra, ma) = run();
        let (rb, mb) = run();
        assert_eq!(ra.epochs, rb.epochs);
        assert_eq!(ma.params, mb.params);
    }

    #[test]
    fn loss_decreases_on_a_learnable_task() {
        let (mut model, data) = tiny_model_and_data(3);
        let mut cfg = TrainConfig::default();
        cfg.max_epochs = 40;
        cfg.seed = 3;
        let report = train(&mut model, &data, &cfg).unwrap();
        assert!(report.diverged.is_none());
        let first = report.epochs.first().unwrap().train_loss;
        let last = report.epochs.last().unwrap().train_loss;
        assert!(last < first, "{last} !< {first}");
    }

    #[test]
    fn restored_checkpoint_reproduces_best_epoch_metrics_bit_exactly() {
        let (mut model_a, data) = tiny_model_and_data(11);
        let mut cfg = TrainConfig::default();
        cfg.max_epochs = 12;
        cfg.seed = 11;
        let report = train(&mut model_a, &data, &cfg).unwrap();
        let best = report.best_epoch;
        assert!(best >= 1);

        // A second run stopped exactly at the best epoch ends holding the
        // same parameters: batches, updates and schedule agree up to that
        // epoch, and restore hands back that epoch's checkpoint.
        let (mut model_b, _) = tiny_model_and_data(11);
        let mut cfg_b = cfg.clone();
        cfg_b.max_epochs = best;
        train(&mut model_b, &data, &cfg_b).unwrap();
        assert_eq!(model_a.params, model_b.params);

        let ma = evaluate(&model_a, &data, Split::Test).unwrap();
        let mb = evaluate(&model_b, &data, Split::Test).unwrap();
        assert_eq!(ma.micro_f1.to_bits(), mb.micro_f1.to_bits());
        assert_eq!(ma.hamming_loss.to_bits(), mb.hamming_loss.to_bits());
    }

    #[test]
    fn equal_frequencies_make_weighting_a_constant_factor() {
        // With all classes at frequency 1/2 every weight is ln 2, so the
        // weighted loss is exactly ln2 * unweighted and gradients are
        // parallel (cosine 1).
        let (model, data) = tiny_model_and_data(5);
        let balanced: Vec<&Sample> = data.samples.iter().take(8).collect();
        let unit = ClassWeights::unit(&[2, 2, 2]);
        let ln2 = ClassWeights {
            per_output: vec![vec![core::f64::consts::LN_2; 2]; 3],
        };

        let grads_for = |w: &ClassWeights| {
            let mut tape = Tape::new();
            let loss = model.batch_loss(&mut tape, &balanced, w, &mut Phase::Eval).unwrap();
            tape.backward(loss).unwrap();
            let gs: Vec<f64> = tape
                .param_nodes()
                .iter()
                .flat_map(|&id| tape.grad(id).data().to_vec())
                .collect();
            (tape.value(loss).data()[0], gs)
        };
        let (lu, gu) = grads_for(&unit);
        let (lw, gw) = grads_for(&ln2);
        assert!((lw - core::f64::consts::LN_2 * lu).abs() < 1e-12);
        let dot: f64 = gu.iter().zip(gw.iter()).map(|(a, b)| a * b).sum();
        let nu = libm::sqrt(gu.iter().map(|v| v * v).sum());
        let nw = libm::sqrt(gw.iter().map(|v| v * v).sum());
        assert!((dot / (nu * nw) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn multi_run_aggregates() {
        let data = gen_synthetic(&SynthSpec::new(SynthKind::MultiOutputCorrelated, 45), 3).unwrap();
        let task = TaskSpec {
            kind: TaskKind::MultiOutput,
            inputs: vec![10],
            outputs: vec![2, 2, 2],
            projection_dim: None,
            use_label_embedding: false,
            bags: false,
        };
        let bcfg = BundleConfig {
            n_layers: 2,
            d_central: 4,
            d_mini: 3,
            n_minicolumns: 3,
            ..BundleConfig::default()
        };
        let mut cfg = TrainConfig::default();
        cfg.max_epochs = 3;
        cfg.n_runs = 1;
        let report = multi_run(
            |seed| ClbModel::new(bcfg.clone(), task.clone(), seed),
            &data,
            &cfg,
            Split::Test,
        )
        .unwrap();
        assert_eq!(report.metrics.len(), 1);
        assert_eq!(report.std_micro_f1, 0.0);
        assert_eq!(report.mean_micro_f1, report.metrics[0].micro_f1);

        // Two identical deterministic runs have zero spread.
        let m = report.metrics[0].micro_f1;
        let (mean, std) = super::mean_std(&[m, m]);
        assert_eq!(mean, m);
        assert_eq!(std, 0.0);
    }
}
