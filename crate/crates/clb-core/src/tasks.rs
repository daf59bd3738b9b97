//! Task wirings: how samples enter the bundle, how predictions leave it,
//! and the weighted multi-label loss.
//!
//! Three wirings cover the multi-X settings:
//!
//! - **multi-output** (multi-label / multi-task): one mini-column per
//!   target; every column reads the feature vector at layer 1, and each
//!   mini-column top predicts its own output.
//! - **multi-input** (multi-view / multi-instance): one mini-column per
//!   part; parts are projected into a common space, the central column
//!   reads their mean, and the central top predicts the single output.
//! - **multi-input/multi-output**: an input-side stage whose top central
//!   state feeds an output-side stage (a single link between stages).
//!
//! Also here: [`HwnModel`], a per-label highway column with layer-tied
//! weights and no mini-columns, the baseline the bundle is compared with.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::bundle::{
    build_params, bundle_forward, embed_labels, Activation, BoundBundle, BundleConfig,
    BundleParams, ForwardTrace, Head, InputFirst, OutputFirst, ParamInit,
};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::numerics::{NodeId, Tape, Tensor};
use crate::training::{dropout_node, ClassWeights, Model, Phase};

/// The three input/output wirings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    MultiOutput,
    MultiInput,
    MultiInOut,
}

impl TaskKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::MultiOutput => "multi_output",
            TaskKind::MultiInput => "multi_input",
            TaskKind::MultiInOut => "multi_in_out",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "multi_output" => Ok(TaskKind::MultiOutput),
            "multi_input" => Ok(TaskKind::MultiInput),
            "multi_in_out" => Ok(TaskKind::MultiInOut),
            other => Err(Error::Config(format!("unknown task kind `{other}`"))),
        }
    }
}

/// What a bundle is wired to.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Input part dimensions (one entry per view; a single entry for
    /// multi-output tasks and for instance bags).
    pub inputs: Vec<usize>,
    /// Output arities: 2 for binary, k for k-class.
    pub outputs: Vec<usize>,
    /// Common space dimension for input parts (input-side tasks only).
    pub projection_dim: Option<usize>,
    /// Shared output mini-columns read label embeddings.
    pub use_label_embedding: bool,
    /// Inputs are variable-size instance bags.
    pub bags: bool,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(Error::Config("task has no input parts".into()));
        }
        if self.outputs.is_empty() {
            return Err(Error::Config("task has no outputs".into()));
        }
        if self.inputs.contains(&0) {
            return Err(Error::Config("input part dimensions must be positive".into()));
        }
        if let Some(&k) = self.outputs.iter().find(|&&k| k < 2) {
            return Err(Error::Config(format!("output arity {k} below 2")));
        }
        match self.kind {
            TaskKind::MultiOutput => {
                if self.inputs.len() != 1 {
                    return Err(Error::Config(
                        "multi_output takes exactly one input part".into(),
                    ));
                }
                if self.bags {
                    return Err(Error::Config("multi_output cannot read bags".into()));
                }
            }
            TaskKind::MultiInput => {
                if self.outputs.len() != 1 {
                    return Err(Error::Config(
                        "multi_input predicts exactly one output".into(),
                    ));
                }
            }
            TaskKind::MultiInOut => {
                if self.bags {
                    return Err(Error::Config("bags are a multi_input setting".into()));
                }
            }
        }
        if self.bags && self.inputs.len() != 1 {
            return Err(Error::Config(
                "bag tasks carry a single per-instance dimension".into(),
            ));
        }
        if self.use_label_embedding && self.kind == TaskKind::MultiInput {
            return Err(Error::Config(
                "label embedding needs an output-side stage".into(),
            ));
        }
        Ok(())
    }

    /// Cross-checks the architecture config against this task.
    pub fn check_config(&self, cfg: &BundleConfig) -> Result<()> {
        if self.use_label_embedding {
            if !cfg.share_minicolumns {
                return Err(Error::Config(
                    "label embedding requires shared mini-columns".into(),
                ));
            }
            if cfg.embed_dim.is_none() {
                return Err(Error::Config(
                    "label embedding requested but embed_dim unset".into(),
                ));
            }
        } else if cfg.embed_dim.is_some() {
            return Err(Error::Config(
                "embed_dim set but the task does not use label embedding".into(),
            ));
        }
        if self.bags && !cfg.share_minicolumns {
            return Err(Error::Config(
                "variable-size bags require shared mini-columns".into(),
            ));
        }
        let fixed_m = match self.kind {
            TaskKind::MultiOutput | TaskKind::MultiInOut => Some(self.outputs.len()),
            TaskKind::MultiInput => {
                if self.bags {
                    None
                } else {
                    Some(self.inputs.len())
                }
            }
        };
        if let Some(m) = fixed_m {
            if cfg.n_minicolumns != m {
                return Err(Error::Config(format!(
                    "n_minicolumns {} does not match the task ({m})",
                    cfg.n_minicolumns
                )));
            }
        }
        match self.kind {
            TaskKind::MultiInput | TaskKind::MultiInOut => {
                if self.projection_dim.is_none_or(|d| d == 0) {
                    return Err(Error::Config(
                        "input-side tasks need a positive projection_dim".into(),
                    ));
                }
            }
            TaskKind::MultiOutput => {
                if self.projection_dim.is_some() {
                    return Err(Error::Config(
                        "projection_dim only applies to input-side tasks".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    fn check_sample(&self, sample: &Sample) -> Result<()> {
        if self.bags {
            if !sample.bag || sample.parts.is_empty() {
                return Err(Error::Usage("expected a non-empty instance bag".into()));
            }
            for p in &sample.parts {
                if p.dim() != self.inputs[0] {
                    return Err(Error::Shape {
                        op: "bag instance",
                        lhs: (p.dim(), 1),
                        rhs: (self.inputs[0], 1),
                    });
                }
            }
            return Ok(());
        }
        if sample.parts.len() != self.inputs.len() {
            return Err(Error::Usage(format!(
                "sample has {} parts, task expects {}",
                sample.parts.len(),
                self.inputs.len()
            )));
        }
        for (p, &d) in sample.parts.iter().zip(self.inputs.iter()) {
            if p.dim() != d {
                return Err(Error::Shape {
                    op: "input part",
                    lhs: (p.dim(), 1),
                    rhs: (d, 1),
                });
            }
        }
        Ok(())
    }
}

/// Per-output probabilities: a single `P(y=1)` for binary outputs, a full
/// distribution for k-class outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Vec<Vec<f64>>,
    pub thresholds: Vec<f64>,
}

impl Prediction {
    /// Hard class decisions: binary outputs compare against their
    /// threshold, k-class outputs take the argmax (first index on ties).
    pub fn hard(&self) -> Vec<usize> {
        self.probs
            .iter()
            .zip(self.thresholds.iter())
            .map(|(p, &thr)| {
                if p.len() == 1 {
                    usize::from(p[0] > thr)
                } else {
                    let mut best = 0usize;
                    for (i, &v) in p.iter().enumerate() {
                        if v > p[best] {
                            best = i;
                        }
                    }
                    best
                }
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// First-layer wirings
// ---------------------------------------------------------------------------

/// Affine map plus bias, then the body activation.
fn project(
    tape: &mut Tape,
    w: NodeId,
    x: NodeId,
    b: NodeId,
    act: Activation,
) -> Result<NodeId> {
    let wx = tape.matmul(w, x)?;
    let pre = tape.add(wx, b)?;
    Ok(act.apply(tape, pre))
}

/// First-layer states for an output-side stage: the central column and all
/// mini-columns read the feature vector; with shared mini-columns each
/// column reads its label embedding instead, and the central column adds
/// the mean embedding signal.
pub fn init_multi_output(
    tape: &mut Tape,
    x: NodeId,
    first: &OutputFirst<NodeId>,
    m_l: usize,
    act: Activation,
) -> Result<(NodeId, Vec<NodeId>)> {
    match first {
        OutputFirst::PerLabel { w, b, v, vb } => {
            if v.len() != m_l {
                return Err(Error::Config(format!(
                    "{} first-layer mini projections for {m_l} outputs",
                    v.len()
                )));
            }
            let h_c = project(tape, *w, x, *b, act)?;
            let mut h_mini = Vec::with_capacity(m_l);
            for i in 0..m_l {
                h_mini.push(project(tape, v[i], x, vb[i], act)?);
            }
            Ok((h_c, h_mini))
        }
        OutputFirst::Embedded {
            w,
            b,
            u,
            wm,
            v,
            mb,
            embed,
        } => {
            let cols = embed_labels(tape, *embed, m_l)?;
            let mut terms = Vec::with_capacity(m_l);
            for &e in &cols {
                terms.push(tape.matmul(*u, e)?);
            }
            let agg = tape.mean_of(&terms)?;
            let wx = tape.matmul(*w, x)?;
            let pre = tape.add(wx, agg)?;
            let pre = tape.add(pre, *b)?;
            let h_c = act.apply(tape, pre);

            let vx = tape.matmul(*v, x)?;
            let mut h_mini = Vec::with_capacity(m_l);
            for &e in &cols {
                let we = tape.matmul(*wm, e)?;
                let pre = tape.add(we, vx)?;
                let pre = tape.add(pre, *mb)?;
                h_mini.push(act.apply(tape, pre));
            }
            Ok((h_c, h_mini))
        }
    }
}

/// First-layer states for an input-side stage: each part is projected into
/// the common space, each mini-column reads its projected part, and the
/// central column reads the mean of all projected parts.
pub fn init_multi_input(
    tape: &mut Tape,
    parts: &[NodeId],
    first: &InputFirst<NodeId>,
    bags: bool,
    share_minicolumns: bool,
    act: Activation,
) -> Result<(NodeId, Vec<NodeId>)> {
    if parts.is_empty() {
        return Err(Error::Usage("init_multi_input: no input parts".into()));
    }
    let pick = |list: &[NodeId], i: usize, shared: bool, what: &str| -> Result<NodeId> {
        let idx = if shared { 0 } else { i };
        list.get(idx).copied().ok_or_else(|| {
            Error::Config(format!("{what}: no entry for part {i} ({} stored)", list.len()))
        })
    };

    let mut projected = Vec::with_capacity(parts.len());
    for (i, &x) in parts.iter().enumerate() {
        let p = pick(&first.proj, i, bags, "projection")?;
        let pb = pick(&first.proj_b, i, bags, "projection bias")?;
        let px = tape.matmul(p, x)?;
        projected.push(tape.add(px, pb)?);
    }

    let mut h_mini = Vec::with_capacity(parts.len());
    for (i, &p) in projected.iter().enumerate() {
        let w = pick(&first.w, i, share_minicolumns, "mini read-in")?;
        let wb = pick(&first.wb, i, share_minicolumns, "mini read-in bias")?;
        h_mini.push(project(tape, w, p, wb, act)?);
    }

    let mut terms = Vec::with_capacity(parts.len());
    for (i, &p) in projected.iter().enumerate() {
        let u = pick(&first.u, i, share_minicolumns, "central read-in")?;
        terms.push(tape.matmul(u, p)?);
    }
    let agg = tape.mean_of(&terms)?;
    let pre = tape.add(agg, first.ub)?;
    let h_c = act.apply(tape, pre);
    Ok((h_c, h_mini))
}

/// Wires the output-side stage of a combined task: its feature input is
/// the top central state of the completed input stage (the single link
/// between stages).
pub fn compose_mimo(
    tape: &mut Tape,
    input_stage: &ForwardTrace,
    out_first: &OutputFirst<NodeId>,
    m_l: usize,
    act: Activation,
) -> Result<(NodeId, Vec<NodeId>)> {
    let handoff = input_stage.top_central();
    init_multi_output(tape, handoff, out_first, m_l, act)
}

// ---------------------------------------------------------------------------
// Heads and loss
// ---------------------------------------------------------------------------

/// Prediction node for one output: a `1x1` probability for binary heads,
/// a `k x 1` distribution for k-class heads.
pub fn head_prob(tape: &mut Tape, head: &Head<NodeId>, state: NodeId) -> Result<NodeId> {
    match head {
        Head::Binary { z, b } => {
            let logit = tape.matmul(*z, state)?;
            let logit = tape.add(logit, *b)?;
            Ok(tape.sigmoid(logit))
        }
        Head::Multi { q, b } => {
            let logits = tape.matmul(*q, state)?;
            let logits = tape.add(logits, *b)?;
            tape.softmax(logits)
        }
    }
}

/// Negative log-likelihood summed over outputs, each term scaled by the
/// class weight of its true class: `L = -sum_i w_i(y_i) * log P_i(y_i)`.
/// With unit weights this is exactly the unweighted multi-label loss.
/// Probabilities are clamped at 1e-12 before the log, so the loss is
/// always finite; the tape counts clamp events.
pub fn multilabel_loss(
    tape: &mut Tape,
    probs: &[NodeId],
    targets: &[usize],
    arities: &[usize],
    weights: &[Vec<f64>],
) -> Result<NodeId> {
    if probs.len() != targets.len() || probs.len() != arities.len() {
        return Err(Error::Usage(format!(
            "loss over {} outputs with {} targets / {} arities",
            probs.len(),
            targets.len(),
            arities.len()
        )));
    }
    if weights.len() != probs.len() {
        return Err(Error::Usage(format!(
            "{} weight groups for {} outputs",
            weights.len(),
            probs.len()
        )));
    }
    let mut total: Option<NodeId> = None;
    for (i, (&p, (&y, &k))) in probs
        .iter()
        .zip(targets.iter().zip(arities.iter()))
        .enumerate()
    {
        if y >= k {
            return Err(Error::Usage(format!(
                "output {i}: class {y} out of range for arity {k}"
            )));
        }
        let w = *weights[i].get(y).ok_or_else(|| {
            Error::Usage(format!("output {i}: no class weight for class {y}"))
        })?;
        if w <= 0.0 || w.is_nan() {
            return Err(Error::Usage(format!(
                "output {i}: class weight {w} must be strictly positive"
            )));
        }
        let log_p = if k == 2 {
            let p_true = if y == 1 { p } else { tape.one_minus(p) };
            tape.ln_clamped(p_true)
        } else {
            let p_y = tape.pick(p, y)?;
            tape.ln_clamped(p_y)
        };
        let term = tape.scale(log_p, -w);
        total = Some(match total {
            None => term,
            Some(t) => tape.add(t, term)?,
        });
    }
    total.ok_or_else(|| Error::Usage("loss over zero outputs".into()))
}

// ---------------------------------------------------------------------------
// The bundle as a trainable model
// ---------------------------------------------------------------------------

/// One complete forward pass of a sample.
pub struct ForwardPass {
    pub input_trace: Option<ForwardTrace>,
    pub output_trace: Option<ForwardTrace>,
    /// One probability node per output.
    pub probs: Vec<NodeId>,
}

/// A column bundle plus its task wiring.
#[derive(Debug, Clone, PartialEq)]
pub struct ClbModel {
    pub config: BundleConfig,
    pub task: TaskSpec,
    pub params: BundleParams,
}

impl ClbModel {
    pub fn new(config: BundleConfig, task: TaskSpec, seed: u64) -> Result<Self> {
        let params = build_params(&config, &task, ParamInit::Seeded(seed))?;
        Ok(ClbModel {
            config,
            task,
            params,
        })
    }

    /// Builds the whole computation for one sample on the tape. Dropout
    /// (training phase only) is applied to the layer-1 states of each
    /// stage and to the states feeding the heads.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundBundle,
        sample: &Sample,
        phase: &mut Phase,
    ) -> Result<ForwardPass> {
        self.task.check_sample(sample)?;
        let act = self.config.activation;
        let rate = self.config.dropout_rate;

        let part_nodes: Vec<NodeId> = sample
            .parts
            .iter()
            .map(|p| tape.constant(Tensor::vector(&p.to_dense())))
            .collect();

        let mut input_trace = None;
        let mut handoff: Option<NodeId> = None;
        if let Some(stage) = bound.input.as_ref() {
            let (h_c, h_mini) = init_multi_input(
                tape,
                &part_nodes,
                &stage.first,
                self.task.bags,
                self.config.share_minicolumns,
                act,
            )?;
            let h_c = dropout_node(tape, h_c, rate, phase)?;
            let h_mini = h_mini
                .into_iter()
                .map(|h| dropout_node(tape, h, rate, phase))
                .collect::<Result<Vec<_>>>()?;
            let trace = bundle_forward(tape, h_c, &h_mini, &stage.body, &self.config)?;
            handoff = Some(trace.top_central());
            input_trace = Some(trace);
        }

        let mut output_trace = None;
        let head_states: Vec<NodeId>;
        match bound.output.as_ref() {
            Some(stage) => {
                let x = match handoff {
                    Some(h) => h,
                    None => part_nodes[0],
                };
                let m_l = self.task.outputs.len();
                let (h_c, h_mini) = init_multi_output(tape, x, &stage.first, m_l, act)?;
                let h_c = dropout_node(tape, h_c, rate, phase)?;
                let h_mini = h_mini
                    .into_iter()
                    .map(|h| dropout_node(tape, h, rate, phase))
                    .collect::<Result<Vec<_>>>()?;
                let trace = bundle_forward(tape, h_c, &h_mini, &stage.body, &self.config)?;
                head_states = (0..m_l).map(|i| trace.top_mini(i)).collect();
                output_trace = Some(trace);
            }
            None => {
                let trace = input_trace
                    .as_ref()
                    .ok_or_else(|| Error::Config("bundle has neither stage".into()))?;
                head_states = vec![trace.top_central()];
            }
        }

        let mut probs = Vec::with_capacity(head_states.len());
        for (i, &state) in head_states.iter().enumerate() {
            let state = dropout_node(tape, state, rate, phase)?;
            let head = bound.heads.own[i]
                .as_ref()
                .or(bound.heads.shared_binary.as_ref())
                .ok_or_else(|| Error::Config(format!("output {i} has no head")))?;
            probs.push(head_prob(tape, head, state)?);
        }

        Ok(ForwardPass {
            input_trace,
            output_trace,
            probs,
        })
    }

    /// Loss for one sample, given its forward pass.
    pub fn sample_loss(
        &self,
        tape: &mut Tape,
        pass: &ForwardPass,
        sample: &Sample,
        weights: &ClassWeights,
    ) -> Result<NodeId> {
        multilabel_loss(
            tape,
            &pass.probs,
            &sample.targets,
            &self.task.outputs,
            &weights.per_output,
        )
    }

    /// Probabilities for one sample in evaluation mode (fresh tape, no
    /// dropout).
    pub fn predict(&self, sample: &Sample) -> Result<Prediction> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let pass = self.forward(&mut tape, &bound, sample, &mut Phase::Eval)?;
        let probs = pass
            .probs
            .iter()
            .map(|&p| tape.value(p).data().to_vec())
            .collect();
        Ok(Prediction {
            probs,
            thresholds: vec![0.5; self.task.outputs.len()],
        })
    }

    /// Eval-mode forward pass handing back the tape, for state inspection.
    pub fn trace(&self, sample: &Sample) -> Result<(Tape, ForwardPass)> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let pass = self.forward(&mut tape, &bound, sample, &mut Phase::Eval)?;
        Ok((tape, pass))
    }
}

impl Model for ClbModel {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        self.params.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.params.tensors_mut()
    }

    fn batch_loss(
        &self,
        tape: &mut Tape,
        samples: &[&Sample],
        weights: &ClassWeights,
        phase: &mut Phase,
    ) -> Result<NodeId> {
        if samples.is_empty() {
            return Err(Error::Usage("empty batch".into()));
        }
        let bound = self.params.bind(tape);
        let mut losses = Vec::with_capacity(samples.len());
        for sample in samples {
            let pass = self.forward(tape, &bound, sample, phase)?;
            losses.push(self.sample_loss(tape, &pass, sample, weights)?);
        }
        tape.mean_of(&losses)
    }

    fn predict(&self, sample: &Sample) -> Result<Prediction> {
        ClbModel::predict(self, sample)
    }
}

// ---------------------------------------------------------------------------
// Per-label highway-network baseline
// ---------------------------------------------------------------------------

/// A single highway column with layer-tied weights and a binary head. One
/// independent net is trained per label; it is defined directly rather
/// than as a degenerate bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct Hwn<T> {
    pub first_w: T,
    pub first_b: T,
    pub w: T,
    pub b: T,
    pub gate_w: T,
    pub gate_b: T,
    pub z: T,
    pub zb: T,
}

impl<T> Hwn<T> {
    fn map<'a, U>(&'a self, f: &mut dyn FnMut(String, &'a T) -> U) -> Hwn<U> {
        Hwn {
            first_w: f("first.w".into(), &self.first_w),
            first_b: f("first.bias".into(), &self.first_b),
            w: f("body.w".into(), &self.w),
            b: f("body.bias".into(), &self.b),
            gate_w: f("body.gate_w".into(), &self.gate_w),
            gate_b: f("body.gate_bias".into(), &self.gate_b),
            z: f("head.z".into(), &self.z),
            zb: f("head.bias".into(), &self.zb),
        }
    }

    fn for_each_mut(&mut self, f: &mut dyn FnMut(String, &mut T)) {
        f("first.w".into(), &mut self.first_w);
        f("first.bias".into(), &mut self.first_b);
        f("body.w".into(), &mut self.w);
        f("body.bias".into(), &mut self.b);
        f("body.gate_w".into(), &mut self.gate_w);
        f("body.gate_bias".into(), &mut self.gate_b);
        f("head.z".into(), &mut self.z);
        f("head.bias".into(), &mut self.zb);
    }
}

/// Baseline model predicting one binary label from the sole input part.
#[derive(Debug, Clone, PartialEq)]
pub struct HwnModel {
    pub n_layers: usize,
    pub d_hidden: usize,
    pub activation: Activation,
    pub dropout_rate: f64,
    pub label_index: usize,
    pub params: Hwn<Tensor>,
}

impl HwnModel {
    pub fn new(
        n_layers: usize,
        d_hidden: usize,
        d_input: usize,
        activation: Activation,
        label_index: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_layers < 1 || d_hidden < 1 || d_input < 1 {
            return Err(Error::Config("highway column sizes must be positive".into()));
        }
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut weight = |rows: usize, cols: usize| {
            let limit = libm::sqrt(6.0 / (rows + cols) as f64);
            let data = (0..rows * cols)
                .map(|_| (2.0 * rng.gen::<f64>() - 1.0) * limit)
                .collect();
            Tensor::from_vec(rows, cols, data).expect("sized data")
        };
        let params = Hwn {
            first_w: weight(d_hidden, d_input),
            first_b: Tensor::zeros(d_hidden, 1),
            w: weight(d_hidden, d_hidden),
            b: Tensor::zeros(d_hidden, 1),
            gate_w: weight(d_hidden, d_hidden),
            gate_b: Tensor::zeros(d_hidden, 1).map(|_| -1.0),
            z: weight(1, d_hidden),
            zb: Tensor::zeros(1, 1),
        };
        Ok(HwnModel {
            n_layers,
            d_hidden,
            activation,
            dropout_rate: 0.0,
            label_index,
            params,
        })
    }

    /// Saturates the body gate bias (identity-propagation checks).
    pub fn saturate_gates(&mut self, bias: f64) {
        self.params.gate_b.data_mut().iter_mut().for_each(|v| *v = bias);
    }

    /// Hidden states h^1..h^T for one input vector.
    pub fn forward_states(
        &self,
        tape: &mut Tape,
        bound: &Hwn<NodeId>,
        x: NodeId,
        phase: &mut Phase,
    ) -> Result<Vec<NodeId>> {
        let act = self.activation;
        let wx = tape.matmul(bound.first_w, x)?;
        let pre = tape.add(wx, bound.first_b)?;
        let h1 = act.apply(tape, pre);
        let h1 = dropout_node(tape, h1, self.dropout_rate, phase)?;
        let mut states = vec![h1];
        for _ in 2..=self.n_layers {
            let prev = *states.last().expect("nonempty");
            let wh = tape.matmul(bound.w, prev)?;
            let pre = tape.add(wh, bound.b)?;
            let candidate = act.apply(tape, pre);
            let gwh = tape.matmul(bound.gate_w, prev)?;
            let gpre = tape.add(gwh, bound.gate_b)?;
            let alpha = tape.sigmoid(gpre);
            let take = tape.hadamard(alpha, candidate)?;
            let carry_coeff = tape.one_minus(alpha);
            let carry = tape.hadamard(carry_coeff, prev)?;
            states.push(tape.add(take, carry)?);
        }
        Ok(states)
    }

    fn prob_node(
        &self,
        tape: &mut Tape,
        bound: &Hwn<NodeId>,
        sample: &Sample,
        phase: &mut Phase,
    ) -> Result<NodeId> {
        if sample.parts.len() != 1 {
            return Err(Error::Usage(
                "the highway baseline reads a single input part".into(),
            ));
        }
        let x = tape.constant(Tensor::vector(&sample.parts[0].to_dense()));
        let states = self.forward_states(tape, bound, x, phase)?;
        let top = *states.last().expect("nonempty");
        let top = dropout_node(tape, top, self.dropout_rate, phase)?;
        let logit = tape.matmul(bound.z, top)?;
        let logit = tape.add(logit, bound.zb)?;
        Ok(tape.sigmoid(logit))
    }

    pub fn bind(&self, tape: &mut Tape) -> Hwn<NodeId> {
        self.params.map(&mut |_, t| tape.leaf(t.clone()))
    }
}

impl Model for HwnModel {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.params.map(&mut |name, t| out.push((name, t)));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, *mut Tensor)> = Vec::new();
        self.params
            .for_each_mut(&mut |name, t| out.push((name, t as *mut Tensor)));
        out.into_iter()
            .map(|(name, p)| (name, unsafe { &mut *p }))
            .collect()
    }

    fn batch_loss(
        &self,
        tape: &mut Tape,
        samples: &[&Sample],
        weights: &ClassWeights,
        phase: &mut Phase,
    ) -> Result<NodeId> {
        if samples.is_empty() {
            return Err(Error::Usage("empty batch".into()));
        }
        let label_weights = weights
            .per_output
            .get(self.label_index)
            .ok_or_else(|| {
                Error::Usage(format!(
                    "no class weights for label {}",
                    self.label_index
                ))
            })?
            .clone();
        let bound = self.bind(tape);
        let mut losses = Vec::with_capacity(samples.len());
        for sample in samples {
            let y = *sample.targets.get(self.label_index).ok_or_else(|| {
                Error::Usage(format!("sample lacks target {}", self.label_index))
            })?;
            let p = self.prob_node(tape, &bound, sample, phase)?;
            let loss = multilabel_loss(
                tape,
                &[p],
                &[y],
                &[2],
                core::slice::from_ref(&label_weights),
            )?;
            losses.push(loss);
        }
        tape.mean_of(&losses)
    }

    fn predict(&self, sample: &Sample) -> Result<Prediction> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let p = self.prob_node(&mut tape, &bound, sample, &mut Phase::Eval)?;
        Ok(Prediction {
            probs: vec![tape.value(p).data().to_vec()],
            thresholds: vec![0.5],
        })
    }
}

/// Convenience entry matching the per-label baseline contract: the
/// probability the baseline assigns to its label for one input.
pub fn hwn_baseline(model: &HwnModel, sample: &Sample) -> Result<f64> {
    Ok(Model::predict(model, sample)?.probs[0][0])
}
