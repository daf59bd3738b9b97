//! The column-bundle architecture.
//!
//! A bundle is one central column plus `M` mini-columns, each a feedforward
//! column of `T` hidden layers. From layer 2 on, every column computes a
//! candidate state from the previous layer (the central column reading the
//! mean of the mini-column states, each mini-column reading the central
//! state) and blends it with its own previous state through a highway gate:
//!
//! ```text
//! candidate_c = g(W h_c + mean_i(U_i h_i) + b)        central column
//! candidate_i = g(W_i h_i + V_i h_c + b_i)            mini-column i
//! alpha       = sigmoid(<same wiring on gate weights>)
//! h'          = alpha * candidate + (1 - alpha) * h
//! ```
//!
//! Layer 1 is a plain, un-gated projection wired by the task (see
//! [`crate::tasks`]); its parameters are never shared with the body.
//! Two sharing switches keep the parameter count in check:
//!
//! - `share_layers` reuses one body block for every layer 2..T
//!   (recurrent-style weight tying);
//! - `share_minicolumns` stores a single `U/W/V` set for all mini-columns,
//!   which also allows a per-sample number of columns (instance bags) and
//!   makes the body cost independent of `M`. Shared mini-columns on the
//!   output side are told apart by a learned label embedding: column `i`
//!   of the embedding matrix is the identity input of mini-column `i`.
//!
//! Parameter containers are generic over their payload so the same
//! structure describes stored tensors (`Bundle<Tensor>`, alias
//! [`BundleParams`]) and their on-tape counterparts (`Bundle<NodeId>`);
//! a single traversal defines the canonical parameter order used by the
//! optimizer, checkpoints, and gradient extraction.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{NodeId, Tape, Tensor};
use crate::tasks::{TaskKind, TaskSpec};

/// Body activation `g`; gates are always sigmoid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub(crate) fn apply(&self, tape: &mut Tape, x: NodeId) -> NodeId {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

/// Architecture hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleConfig {
    /// Depth `T` of every column (layer 1 included).
    pub n_layers: usize,
    pub d_central: usize,
    pub d_mini: usize,
    /// Number of mini-columns. Fixed for multi-output and multi-view
    /// tasks; ignored for instance bags (the count is per sample). For
    /// combined input/output tasks this is the output-side count.
    pub n_minicolumns: usize,
    /// Reuse one body block for layers 2..T.
    pub share_layers: bool,
    /// Store a single mini-column block used by every column.
    pub share_minicolumns: bool,
    /// Label-embedding dimension; set exactly when the task uses label
    /// embeddings.
    pub embed_dim: Option<usize>,
    pub activation: Activation,
    pub dropout_rate: f64,
}

impl Default for BundleConfig {
    fn default() -> Self {
        BundleConfig {
            n_layers: 10,
            d_central: 16,
            d_mini: 8,
            n_minicolumns: 1,
            share_layers: true,
            share_minicolumns: false,
            embed_dim: None,
            activation: Activation::Relu,
            dropout_rate: 0.0,
        }
    }
}

impl BundleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers < 1 {
            return Err(Error::Config("n_layers must be at least 1".into()));
        }
        if self.d_central < 1 || self.d_mini < 1 {
            return Err(Error::Config("column widths must be at least 1".into()));
        }
        if self.n_minicolumns < 1 {
            return Err(Error::Config("n_minicolumns must be at least 1".into()));
        }
        if let Some(d) = self.embed_dim {
            if d < 1 {
                return Err(Error::Config("embed_dim must be at least 1 when set".into()));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// Number of stored body blocks for a column of this depth.
    pub fn n_body_blocks(&self) -> usize {
        if self.n_layers <= 1 {
            0
        } else if self.share_layers {
            1
        } else {
            self.n_layers - 1
        }
    }
}

// ---------------------------------------------------------------------------
// Parameter containers, generic over the payload (Tensor or NodeId).
// ---------------------------------------------------------------------------

/// Mini-column body weights for one layer block.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniBlock<T> {
    pub w: T,
    pub v: T,
    pub b: T,
    pub gate_w: T,
    pub gate_v: T,
    pub gate_b: T,
}

/// Central-column body weights for one layer block. `u` holds one matrix
/// per mini-column, or a single shared matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralBlock<T> {
    pub w: T,
    pub b: T,
    pub u: Vec<T>,
    pub gate_w: T,
    pub gate_b: T,
    pub gate_u: Vec<T>,
}

/// One body layer: the central update plus all mini-column updates.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerBlock<T> {
    pub central: CentralBlock<T>,
    pub minis: Vec<MiniBlock<T>>,
}

/// First layer of an output-side stage (one mini-column per target).
#[derive(Debug, Clone, PartialEq)]
pub enum OutputFirst<T> {
    /// Unshared mini-columns: `h_c = g(W x + b)`, `h_i = g(V_i x + b_i)`.
    PerLabel { w: T, b: T, v: Vec<T>, vb: Vec<T> },
    /// Shared mini-columns with label embedding `E`:
    /// `h_c = g(W x + mean_i(U E_i) + b)`, `h_i = g(Wm E_i + V x + bm)`.
    Embedded {
        w: T,
        b: T,
        u: T,
        wm: T,
        v: T,
        mb: T,
        embed: T,
    },
}

/// First layer of an input-side stage (one mini-column per part). Parts
/// are first projected into a common `d_p`-dimensional space.
#[derive(Debug, Clone, PartialEq)]
pub struct InputFirst<T> {
    /// Per-part projections, or a single shared projection for bags.
    pub proj: Vec<T>,
    pub proj_b: Vec<T>,
    /// Central read-in per part (single entry when mini-columns shared).
    pub u: Vec<T>,
    pub ub: T,
    /// Mini-column read-in per part (single entry when shared).
    pub w: Vec<T>,
    pub wb: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputStage<T> {
    pub first: InputFirst<T>,
    pub body: Vec<LayerBlock<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputStage<T> {
    pub first: OutputFirst<T>,
    pub body: Vec<LayerBlock<T>>,
}

/// Prediction head for one output.
#[derive(Debug, Clone, PartialEq)]
pub enum Head<T> {
    /// One logit; `P(y = 1) = sigmoid(z h + b)`.
    Binary { z: T, b: T },
    /// k logits; `P(y = c) = softmax(Q h + b)[c]`.
    Multi { q: T, b: T },
}

/// Heads for all outputs. Binary outputs of shared mini-columns use one
/// shared head (`shared_binary`); every other output owns its head.
#[derive(Debug, Clone, PartialEq)]
pub struct Heads<T> {
    pub shared_binary: Option<Head<T>>,
    pub own: Vec<Option<Head<T>>>,
}

/// All parameters of a bundle. `input` is present for multi-input and
/// combined tasks, `output` for multi-output and combined tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle<T> {
    pub input: Option<InputStage<T>>,
    pub output: Option<OutputStage<T>>,
    pub heads: Heads<T>,
}

/// Stored parameters.
pub type BundleParams = Bundle<Tensor>;
/// Parameters registered on a tape.
pub type BoundBundle = Bundle<NodeId>;

impl<T> MiniBlock<T> {
    fn map<'a, U>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T) -> U) -> MiniBlock<U> {
        MiniBlock {
            w: f(format!("{prefix}.w"), &self.w),
            v: f(format!("{prefix}.v"), &self.v),
            b: f(format!("{prefix}.bias"), &self.b),
            gate_w: f(format!("{prefix}.gate_w"), &self.gate_w),
            gate_v: f(format!("{prefix}.gate_v"), &self.gate_v),
            gate_b: f(format!("{prefix}.gate_bias"), &self.gate_b),
        }
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T)) {
        f(format!("{prefix}.w"), &mut self.w);
        f(format!("{prefix}.v"), &mut self.v);
        f(format!("{prefix}.bias"), &mut self.b);
        f(format!("{prefix}.gate_w"), &mut self.gate_w);
        f(format!("{prefix}.gate_v"), &mut self.gate_v);
        f(format!("{prefix}.gate_bias"), &mut self.gate_b);
    }
}

impl<T> CentralBlock<T> {
    fn map<'a, U>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T) -> U) -> CentralBlock<U> {
        CentralBlock {
            w: f(format!("{prefix}.w"), &self.w),
            b: f(format!("{prefix}.bias"), &self.b),
            u: self
                .u
                .iter()
                .enumerate()
                .map(|(i, t)| f(format!("{prefix}.u{i}"), t))
                .collect(),
            gate_w: f(format!("{prefix}.gate_w"), &self.gate_w),
            gate_b: f(format!("{prefix}.gate_bias"), &self.gate_b),
            gate_u: self
                .gate_u
                .iter()
                .enumerate()
                .map(|(i, t)| f(format!("{prefix}.gate_u{i}"), t))
                .collect(),
        }
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T)) {
        f(format!("{prefix}.w"), &mut self.w);
        f(format!("{prefix}.bias"), &mut self.b);
        for (i, t) in self.u.iter_mut().enumerate() {
            f(format!("{prefix}.u{i}"), t);
        }
        f(format!("{prefix}.gate_w"), &mut self.gate_w);
        f(format!("{prefix}.gate_bias"), &mut self.gate_b);
        for (i, t) in self.gate_u.iter_mut().enumerate() {
            f(format!("{prefix}.gate_u{i}"), t);
        }
    }
}

impl<T> LayerBlock<T> {
    fn map<'a, U>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T) -> U) -> LayerBlock<U> {
        LayerBlock {
            central: self.central.map(&format!("{prefix}.central"), f),
            minis: self
                .minis
                .iter()
                .enumerate()
                .map(|(i, m)| m.map(&format!("{prefix}.mini{i}"), f))
                .collect(),
        }
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T)) {
        self.central.for_each_mut(&format!("{prefix}.central"), f);
        for (i, m) in self.minis.iter_mut().enumerate() {
            m.for_each_mut(&format!("{prefix}.mini{i}"), f);
        }
    }
}

impl<T> OutputFirst<T> {
    fn map<'a, U>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T) -> U) -> OutputFirst<U> {
        match self {
            OutputFirst::PerLabel { w, b, v, vb } => OutputFirst::PerLabel {
                w: f(format!("{prefix}.w"), w),
                b: f(format!("{prefix}.bias"), b),
                v: v
                    .iter()
                    .enumerate()
                    .map(|(i, t)| f(format!("{prefix}.v{i}"), t))
                    .collect(),
                vb: vb
                    .iter()
                    .enumerate()
                    .map(|(i, t)| f(format!("{prefix}.v{i}.bias"), t))
                    .collect(),
            },
            OutputFirst::Embedded {
                w,
                b,
                u,
                wm,
                v,
                mb,
                embed,
            } => OutputFirst::Embedded {
                w: f(format!("{prefix}.w"), w),
                b: f(format!("{prefix}.bias"), b),
                u: f(format!("{prefix}.u"), u),
                wm: f(format!("{prefix}.wm"), wm),
                v: f(format!("{prefix}.v"), v),
                mb: f(format!("{prefix}.mini_bias"), mb),
                embed: f(format!("{prefix}.embed"), embed),
            },
        }
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T)) {
        match self {
            OutputFirst::PerLabel { w, b, v, vb } => {
                f(format!("{prefix}.w"), w);
                f(format!("{prefix}.bias"), b);
                for (i, t) in v.iter_mut().enumerate() {
                    f(format!("{prefix}.v{i}"), t);
                }
                for (i, t) in vb.iter_mut().enumerate() {
                    f(format!("{prefix}.v{i}.bias"), t);
                }
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
                f(format!("{prefix}.w"), w);
                f(format!("{prefix}.bias"), b);
                f(format!("{prefix}.u"), u);
                f(format!("{prefix}.wm"), wm);
                f(format!("{prefix}.v"), v);
                f(format!("{prefix}.mini_bias"), mb);
                f(format!("{prefix}.embed"), embed);
            }
        }
    }
}

impl<T> InputFirst<T> {
    fn map<'a, U>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T) -> U) -> InputFirst<U> {
        InputFirst {
            proj: self
                .proj
                .iter()
                .enumerate()
                .map(|(i, t)| f(format!("{prefix}.proj{i}"), t))
                .collect(),
            proj_b: self
                .proj_b
                .iter()
                .enumerate()
                .map(|(i, t)| f(format!("{prefix}.proj{i}.bias"), t))
                .collect(),
            u: self
                .u
                .iter()
                .enumerate()
                .map(|(i, t)| f(format!("{prefix}.u{i}"), t))
                .collect(),
            ub: f(format!("{prefix}.central_bias"), &self.ub),
            w: self
                .w
                .iter()
                .enumerate()
                .map(|(i, t)| f(format!("{prefix}.w{i}"), t))
                .collect(),
            wb: self
                .wb
                .iter()
                .enumerate()
                .map(|(i, t)| f(format!("{prefix}.w{i}.bias"), t))
                .collect(),
        }
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T)) {
        for (i, t) in self.proj.iter_mut().enumerate() {
            f(format!("{prefix}.proj{i}"), t);
        }
        for (i, t) in self.proj_b.iter_mut().enumerate() {
            f(format!("{prefix}.proj{i}.bias"), t);
        }
        for (i, t) in self.u.iter_mut().enumerate() {
            f(format!("{prefix}.u{i}"), t);
        }
        f(format!("{prefix}.central_bias"), &mut self.ub);
        for (i, t) in self.w.iter_mut().enumerate() {
            f(format!("{prefix}.w{i}"), t);
        }
        for (i, t) in self.wb.iter_mut().enumerate() {
            f(format!("{prefix}.w{i}.bias"), t);
        }
    }
}

impl<T> Head<T> {
    fn map<'a, U>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T) -> U) -> Head<U> {
        match self {
            Head::Binary { z, b } => Head::Binary {
                z: f(format!("{prefix}.z"), z),
                b: f(format!("{prefix}.bias"), b),
            },
            Head::Multi { q, b } => Head::Multi {
                q: f(format!("{prefix}.q"), q),
                b: f(format!("{prefix}.bias"), b),
            },
        }
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T)) {
        match self {
            Head::Binary { z, b } => {
                f(format!("{prefix}.z"), z);
                f(format!("{prefix}.bias"), b);
            }
            Head::Multi { q, b } => {
                f(format!("{prefix}.q"), q);
                f(format!("{prefix}.bias"), b);
            }
        }
    }
}

impl<T> Bundle<T> {
    /// Visits every parameter in the canonical order, building a new
    /// bundle from the closure's results. Binding to a tape and parameter
    /// naming both go through here, so their orders always agree.
    pub fn map<'a, U>(&'a self, f: &mut dyn FnMut(String, &'a T) -> U) -> Bundle<U> {
        Bundle {
            input: self.input.as_ref().map(|stage| InputStage {
                first: stage.first.map("in.first", f),
                body: stage
                    .body
                    .iter()
                    .enumerate()
                    .map(|(k, b)| b.map(&format!("in.body{k}"), f))
                    .collect(),
            }),
            output: self.output.as_ref().map(|stage| OutputStage {
                first: stage.first.map("out.first", f),
                body: stage
                    .body
                    .iter()
                    .enumerate()
                    .map(|(k, b)| b.map(&format!("out.body{k}"), f))
                    .collect(),
            }),
            heads: Heads {
                shared_binary: self
                    .heads
                    .shared_binary
                    .as_ref()
                    .map(|h| h.map("head.shared", f)),
                own: self
                    .heads
                    .own
                    .iter()
                    .enumerate()
                    .map(|(i, h)| h.as_ref().map(|h| h.map(&format!("head{i}"), f)))
                    .collect(),
            },
        }
    }

    /// Mutable traversal in the same canonical order as [`Bundle::map`].
    pub fn for_each_mut(&mut self, f: &mut dyn FnMut(String, &mut T)) {
        if let Some(stage) = self.input.as_mut() {
            stage.first.for_each_mut("in.first", f);
            for (k, b) in stage.body.iter_mut().enumerate() {
                b.for_each_mut(&format!("in.body{k}"), f);
            }
        }
        if let Some(stage) = self.output.as_mut() {
            stage.first.for_each_mut("out.first", f);
            for (k, b) in stage.body.iter_mut().enumerate() {
                b.for_each_mut(&format!("out.body{k}"), f);
            }
        }
        if let Some(h) = self.heads.shared_binary.as_mut() {
            h.for_each_mut("head.shared", f);
        }
        for (i, h) in self.heads.own.iter_mut().enumerate() {
            if let Some(h) = h {
                h.for_each_mut(&format!("head{i}"), f);
            }
        }
    }
}

impl BundleParams {
    /// Named tensors in canonical order.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.map(&mut |name, t| out.push((name, t)));
        out
    }

    /// Named mutable tensors in canonical order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, *mut Tensor)> = Vec::new();
        self.for_each_mut(&mut |name, t| out.push((name, t as *mut Tensor)));
        // Each parameter is visited exactly once, so the raw pointers are
        // pairwise distinct and reborrowing them is sound.
        out.into_iter()
            .map(|(name, p)| (name, unsafe { &mut *p }))
            .collect()
    }

    /// Registers every tensor as a trainable leaf, in canonical order.
    pub fn bind(&self, tape: &mut Tape) -> BoundBundle {
        self.map(&mut |_, t| tape.leaf(t.clone()))
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        let mut n = 0usize;
        self.map(&mut |_, t| n += t.len());
        n
    }

    /// Scalar parameters in body blocks only (both stages), the portion
    /// whose size the mini-column sharing switch controls.
    pub fn body_param_count(&self) -> usize {
        let mut n = 0usize;
        for stage_body in [
            self.input.as_ref().map(|s| &s.body),
            self.output.as_ref().map(|s| &s.body),
        ]
        .into_iter()
        .flatten()
        {
            for blk in stage_body {
                blk.map("", &mut |_, t: &Tensor| n += t.len());
            }
        }
        n
    }

    /// Overwrites every body gate bias with a constant. Saturating them
    /// far negative closes all gates, which must carry the first-layer
    /// state unchanged to the top.
    pub fn saturate_gates(&mut self, bias: f64) {
        self.for_each_mut(&mut |name, t| {
            if name.ends_with(".gate_bias") {
                t.data_mut().iter_mut().for_each(|v| *v = bias);
            }
        });
    }

    /// The label-embedding matrix, when the output stage uses one.
    pub fn embedding(&self) -> Option<&Tensor> {
        match self.output.as_ref().map(|s| &s.first) {
            Some(OutputFirst::Embedded { embed, .. }) => Some(embed),
            _ => None,
        }
    }
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

/// How to fill fresh parameters.
#[derive(Debug, Clone, Copy)]
pub enum ParamInit {
    /// Uniform `+-sqrt(6 / (fan_in + fan_out))` weights, zero biases, gate
    /// biases at -1 (a mild carry bias), deterministic in the seed.
    Seeded(u64),
    /// All-zero weights (checkpoint loading overwrites them).
    Zeros,
}

struct Filler {
    rng: Option<ChaCha8Rng>,
}

impl Filler {
    fn new(init: ParamInit) -> Self {
        Filler {
            rng: match init {
                ParamInit::Seeded(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
                ParamInit::Zeros => None,
            },
        }
    }

    fn weight(&mut self, rows: usize, cols: usize) -> Tensor {
        match self.rng.as_mut() {
            Some(rng) => {
                let limit = libm::sqrt(6.0 / (rows + cols) as f64);
                let data = (0..rows * cols)
                    .map(|_| (2.0 * rng.gen::<f64>() - 1.0) * limit)
                    .collect();
                Tensor::from_vec(rows, cols, data).expect("sized data")
            }
            None => Tensor::zeros(rows, cols),
        }
    }

    fn bias(&mut self, dim: usize) -> Tensor {
        Tensor::zeros(dim, 1)
    }

    fn gate_bias(&mut self, dim: usize) -> Tensor {
        Tensor::zeros(dim, 1).map(|_| -1.0)
    }

    fn mini_block(&mut self, d_mini: usize, d_central: usize) -> MiniBlock<Tensor> {
        MiniBlock {
            w: self.weight(d_mini, d_mini),
            v: self.weight(d_mini, d_central),
            b: self.bias(d_mini),
            gate_w: self.weight(d_mini, d_mini),
            gate_v: self.weight(d_mini, d_central),
            gate_b: self.gate_bias(d_mini),
        }
    }

    fn layer_block(&mut self, cfg: &BundleConfig, n_minis: usize) -> LayerBlock<Tensor> {
        let stored = if cfg.share_minicolumns { 1 } else { n_minis };
        LayerBlock {
            central: CentralBlock {
                w: self.weight(cfg.d_central, cfg.d_central),
                b: self.bias(cfg.d_central),
                u: (0..stored)
                    .map(|_| self.weight(cfg.d_central, cfg.d_mini))
                    .collect(),
                gate_w: self.weight(cfg.d_central, cfg.d_central),
                gate_b: self.gate_bias(cfg.d_central),
                gate_u: (0..stored)
                    .map(|_| self.weight(cfg.d_central, cfg.d_mini))
                    .collect(),
            },
            minis: (0..stored)
                .map(|_| self.mini_block(cfg.d_mini, cfg.d_central))
                .collect(),
        }
    }

    fn body(&mut self, cfg: &BundleConfig, n_minis: usize) -> Vec<LayerBlock<Tensor>> {
        (0..cfg.n_body_blocks())
            .map(|_| self.layer_block(cfg, n_minis))
            .collect()
    }
}

/// Builds a parameter set for a task. Weights are drawn (or zeroed) in the
/// canonical traversal order, so a seed pins every value.
pub fn build_params(cfg: &BundleConfig, task: &TaskSpec, init: ParamInit) -> Result<BundleParams> {
    cfg.validate()?;
    task.validate()?;
    task.check_config(cfg)?;

    let mut f = Filler::new(init);
    let m_l = task.outputs.len();

    let input = match task.kind {
        TaskKind::MultiOutput => None,
        TaskKind::MultiInput | TaskKind::MultiInOut => {
            let d_p = task.projection_dim.expect("checked by check_config");
            let n_parts = task.inputs.len();
            let n_proj = if task.bags { 1 } else { n_parts };
            let n_cols = if cfg.share_minicolumns { 1 } else { n_parts };
            let first = InputFirst {
                proj: (0..n_proj)
                    .map(|i| f.weight(d_p, task.inputs[if task.bags { 0 } else { i }]))
                    .collect(),
                proj_b: (0..n_proj).map(|_| f.bias(d_p)).collect(),
                u: (0..n_cols).map(|_| f.weight(cfg.d_central, d_p)).collect(),
                ub: f.bias(cfg.d_central),
                w: (0..n_cols).map(|_| f.weight(cfg.d_mini, d_p)).collect(),
                wb: (0..n_cols).map(|_| f.bias(cfg.d_mini)).collect(),
            };
            let body = f.body(cfg, n_parts);
            Some(InputStage { first, body })
        }
    };

    let output = match task.kind {
        TaskKind::MultiInput => None,
        TaskKind::MultiOutput | TaskKind::MultiInOut => {
            // For combined tasks the output stage reads the top central
            // state of the input stage.
            let d_x = if task.kind == TaskKind::MultiOutput {
                task.inputs[0]
            } else {
                cfg.d_central
            };
            let first = if task.use_label_embedding {
                let d_e = cfg.embed_dim.expect("checked by check_config");
                OutputFirst::Embedded {
                    w: f.weight(cfg.d_central, d_x),
                    b: f.bias(cfg.d_central),
                    u: f.weight(cfg.d_central, d_e),
                    wm: f.weight(cfg.d_mini, d_e),
                    v: f.weight(cfg.d_mini, d_x),
                    mb: f.bias(cfg.d_mini),
                    embed: f.weight(d_e, m_l),
                }
            } else {
                OutputFirst::PerLabel {
                    w: f.weight(cfg.d_central, d_x),
                    b: f.bias(cfg.d_central),
                    v: (0..m_l).map(|_| f.weight(cfg.d_mini, d_x)).collect(),
                    vb: (0..m_l).map(|_| f.bias(cfg.d_mini)).collect(),
                }
            };
            let body = f.body(cfg, m_l);
            Some(OutputStage { first, body })
        }
    };

    // Heads read mini-column tops for output stages and the central top
    // for input-only tasks. With shared output mini-columns, binary
    // outputs share one head (label identity enters via the embedding);
    // k-class outputs always own theirs.
    let head_dim = if output.is_some() {
        cfg.d_mini
    } else {
        cfg.d_central
    };
    let share_heads = output.is_some() && cfg.share_minicolumns;
    let shared_binary = if share_heads && task.outputs.contains(&2) {
        Some(Head::Binary {
            z: f.weight(1, head_dim),
            b: f.bias(1),
        })
    } else {
        None
    };
    let own = task
        .outputs
        .iter()
        .map(|&k| {
            if k == 2 {
                if share_heads {
                    None
                } else {
                    Some(Head::Binary {
                        z: f.weight(1, head_dim),
                        b: f.bias(1),
                    })
                }
            } else {
                Some(Head::Multi {
                    q: f.weight(k, head_dim),
                    b: f.bias(k),
                })
            }
        })
        .collect();

    Ok(Bundle {
        input,
        output,
        heads: Heads {
            shared_binary,
            own,
        },
    })
}

/// Seeded initialization (the common case).
pub fn init_params(cfg: &BundleConfig, task: &TaskSpec, seed: u64) -> Result<BundleParams> {
    build_params(cfg, task, ParamInit::Seeded(seed))
}

// ---------------------------------------------------------------------------
// Forward computation
// ---------------------------------------------------------------------------

/// Hidden states of one forward pass through a stage: `h_c[t]` and
/// `h_mini[i][t]` for layers `t = 1..=T` (index 0 is layer 1), plus the
/// gate activations of layers 2..=T.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub h_c: Vec<NodeId>,
    pub h_mini: Vec<Vec<NodeId>>,
    pub gates_central: Vec<NodeId>,
    pub gates_mini: Vec<Vec<NodeId>>,
}

impl ForwardTrace {
    pub fn n_layers(&self) -> usize {
        self.h_c.len()
    }

    pub fn n_minicolumns(&self) -> usize {
        self.h_mini.len()
    }

    /// Top-layer central state.
    pub fn top_central(&self) -> NodeId {
        *self.h_c.last().expect("trace has at least one layer")
    }

    /// Top-layer state of mini-column `i`.
    pub fn top_mini(&self, i: usize) -> NodeId {
        *self.h_mini[i].last().expect("trace has at least one layer")
    }
}

fn gated_blend(tape: &mut Tape, alpha: NodeId, candidate: NodeId, prev: NodeId) -> Result<NodeId> {
    let take = tape.hadamard(alpha, candidate)?;
    let carry_coeff = tape.one_minus(alpha);
    let carry = tape.hadamard(carry_coeff, prev)?;
    tape.add(take, carry)
}

/// One central-column update: candidate from the previous central state
/// and the mean of the previous mini-column states, blended by its gate.
/// A single shared read-in matrix serves all columns when mini-columns
/// are shared. Returns the new state and the gate activation.
pub fn central_step(
    tape: &mut Tape,
    h_c_prev: NodeId,
    h_mini_prev: &[NodeId],
    blk: &CentralBlock<NodeId>,
    share_minicolumns: bool,
    activation: Activation,
) -> Result<(NodeId, NodeId)> {
    if h_mini_prev.is_empty() {
        return Err(Error::Usage("central_step: no mini-column states".into()));
    }
    let pick = |list: &[NodeId], i: usize| -> Result<NodeId> {
        let idx = if share_minicolumns { 0 } else { i };
        list.get(idx).copied().ok_or_else(|| {
            Error::Config(format!(
                "central block stores {} read-ins but column {i} was requested",
                list.len()
            ))
        })
    };

    let wh = tape.matmul(blk.w, h_c_prev)?;
    let mut terms = Vec::with_capacity(h_mini_prev.len());
    for (i, &h) in h_mini_prev.iter().enumerate() {
        terms.push(tape.matmul(pick(&blk.u, i)?, h)?);
    }
    let agg = tape.mean_of(&terms)?;
    let pre = tape.add(wh, agg)?;
    let pre = tape.add(pre, blk.b)?;
    let candidate = activation.apply(tape, pre);

    let gwh = tape.matmul(blk.gate_w, h_c_prev)?;
    let mut gate_terms = Vec::with_capacity(h_mini_prev.len());
    for (i, &h) in h_mini_prev.iter().enumerate() {
        gate_terms.push(tape.matmul(pick(&blk.gate_u, i)?, h)?);
    }
    let gagg = tape.mean_of(&gate_terms)?;
    let gpre = tape.add(gwh, gagg)?;
    let gpre = tape.add(gpre, blk.gate_b)?;
    let alpha = tape.sigmoid(gpre);

    let out = gated_blend(tape, alpha, candidate, h_c_prev)?;
    Ok((out, alpha))
}

/// One mini-column update: candidate from its own previous state and the
/// previous central state, blended by its gate.
pub fn mini_step(
    tape: &mut Tape,
    h_i_prev: NodeId,
    h_c_prev: NodeId,
    blk: &MiniBlock<NodeId>,
    activation: Activation,
) -> Result<(NodeId, NodeId)> {
    let wh = tape.matmul(blk.w, h_i_prev)?;
    let vh = tape.matmul(blk.v, h_c_prev)?;
    let pre = tape.add(wh, vh)?;
    let pre = tape.add(pre, blk.b)?;
    let candidate = activation.apply(tape, pre);

    let gwh = tape.matmul(blk.gate_w, h_i_prev)?;
    let gvh = tape.matmul(blk.gate_v, h_c_prev)?;
    let gpre = tape.add(gwh, gvh)?;
    let gpre = tape.add(gpre, blk.gate_b)?;
    let alpha = tape.sigmoid(gpre);

    let out = gated_blend(tape, alpha, candidate, h_i_prev)?;
    Ok((out, alpha))
}

/// Runs layers 2..=T from already-computed first-layer states. Both column
/// kinds read layer t-1 states only (synchronous update), and with layer
/// sharing the same block applies at every depth.
pub fn bundle_forward(
    tape: &mut Tape,
    h_c_1: NodeId,
    h_mini_1: &[NodeId],
    body: &[LayerBlock<NodeId>],
    cfg: &BundleConfig,
) -> Result<ForwardTrace> {
    let t_layers = cfg.n_layers;
    let expected = cfg.n_body_blocks();
    if body.len() != expected {
        return Err(Error::Config(format!(
            "{} body blocks for T={t_layers} (expected {expected})",
            body.len()
        )));
    }
    let m = h_mini_1.len();
    let mut trace = ForwardTrace {
        h_c: vec![h_c_1],
        h_mini: h_mini_1.iter().map(|&h| vec![h]).collect(),
        gates_central: Vec::new(),
        gates_mini: vec![Vec::new(); m],
    };

    for t in 2..=t_layers {
        let blk = &body[if cfg.share_layers { 0 } else { t - 2 }];
        if !cfg.share_minicolumns && blk.minis.len() != m {
            return Err(Error::Config(format!(
                "layer block stores {} mini-columns, sample has {m}",
                blk.minis.len()
            )));
        }
        let prev_c = trace.h_c[t - 2];
        let prev_minis: Vec<NodeId> = trace.h_mini.iter().map(|col| col[t - 2]).collect();

        let (new_c, alpha_c) = central_step(
            tape,
            prev_c,
            &prev_minis,
            &blk.central,
            cfg.share_minicolumns,
            cfg.activation,
        )?;
        trace.h_c.push(new_c);
        trace.gates_central.push(alpha_c);

        for i in 0..m {
            let mblk = &blk.minis[if cfg.share_minicolumns { 0 } else { i }];
            let (new_i, alpha_i) = mini_step(tape, prev_minis[i], prev_c, mblk, cfg.activation)?;
            trace.h_mini[i].push(new_i);
            trace.gates_mini[i].push(alpha_i);
        }
    }
    Ok(trace)
}

/// Columns of the embedding matrix as vector nodes; column `i` is the
/// identity input of output mini-column `i`.
pub fn embed_labels(tape: &mut Tape, embed: NodeId, m_l: usize) -> Result<Vec<NodeId>> {
    let cols = tape.value(embed).cols();
    if cols != m_l {
        return Err(Error::Shape {
            op: "embed_labels",
            lhs: tape.value(embed).shape(),
            rhs: (tape.value(embed).rows(), m_l),
        });
    }
    (0..m_l).map(|i| tape.column_of(embed, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{TaskKind, TaskSpec};
    use alloc::vec;

    fn zero_mini(d_m: usize, d_c: usize) -> MiniBlock<Tensor> {
        MiniBlock {
            w: Tensor::zeros(d_m, d_m),
            v: Tensor::zeros(d_m, d_c),
            b: Tensor::zeros(d_m, 1),
            gate_w: Tensor::zeros(d_m, d_m),
            gate_v: Tensor::zeros(d_m, d_c),
            gate_b: Tensor::zeros(d_m, 1),
        }
    }

    fn zero_central(d_c: usize, d_m: usize, n_u: usize) -> CentralBlock<Tensor> {
        CentralBlock {
            w: Tensor::zeros(d_c, d_c),
            b: Tensor::zeros(d_c, 1),
            u: (0..n_u).map(|_| Tensor::zeros(d_c, d_m)).collect(),
            gate_w: Tensor::zeros(d_c, d_c),
            gate_b: Tensor::zeros(d_c, 1),
            gate_u: (0..n_u).map(|_| Tensor::zeros(d_c, d_m)).collect(),
        }
    }

    fn bind_central(tape: &mut Tape, blk: &CentralBlock<Tensor>) -> CentralBlock<NodeId> {
        blk.map("c", &mut |_, t| tape.leaf(t.clone()))
    }

    fn bind_mini(tape: &mut Tape, blk: &MiniBlock<Tensor>) -> MiniBlock<NodeId> {
        blk.map("m", &mut |_, t| tape.leaf(t.clone()))
    }

    fn multi_output_task(m_l: usize, d_x: usize) -> TaskSpec {
        TaskSpec {
            kind: TaskKind::MultiOutput,
            inputs: vec![d_x],
            outputs: vec![2; m_l],
            projection_dim: None,
            use_label_embedding: false,
            bags: false,
        }
    }

    #[test]
    fn central_step_with_zero_params_halves_previous_state() {
        let mut tape = Tape::new();
        let blk = zero_central(3, 2, 1);
        let bound = bind_central(&mut tape, &blk);
        let h_c = tape.constant(Tensor::vector(&[1.0, -2.0, 4.0]));
        let h_m = tape.constant(Tensor::vector(&[0.5, 0.5]));
        let (out, alpha) =
            central_step(&mut tape, h_c, &[h_m], &bound, true, Activation::Relu).unwrap();
        for &a in tape.value(alpha).data() {
            assert_eq!(a, 0.5);
        }
        // candidate relu(0) = 0, so out = 0.5 * h_c... except relu zeroes
        // nothing here; blend = 0.5*0 + 0.5*h_c.
        let got = tape.value(out).data();
        assert_eq!(got, &[0.5, -1.0, 2.0]);
    }

    #[test]
    fn saturated_gate_carries_previous_state() {
        let mut tape = Tape::new();
        let mut blk = zero_central(2, 2, 1);
        blk.gate_b = Tensor::zeros(2, 1).map(|_| -50.0);
        let bound = bind_central(&mut tape, &blk);
        let h_c = tape.constant(Tensor::vector(&[0.3, -0.7]));
        let h_m = tape.constant(Tensor::vector(&[1.0, 1.0]));
        let (out, _) =
            central_step(&mut tape, h_c, &[h_m], &bound, true, Activation::Relu).unwrap();
        for (a, b) in tape.value(out).data().iter().zip(tape.value(h_c).data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn mini_step_anchors() {
        let mut tape = Tape::new();
        let blk = zero_mini(2, 3);
        let bound = bind_mini(&mut tape, &blk);
        let h_i = tape.constant(Tensor::vector(&[2.0, -4.0]));
        let h_c = tape.constant(Tensor::vector(&[1.0, 1.0, 1.0]));
        let (out, _) = mini_step(&mut tape, h_i, h_c, &bound, Activation::Relu).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0, -2.0]);

        let mut tape = Tape::new();
        let mut blk = zero_mini(2, 3);
        blk.gate_b = Tensor::zeros(2, 1).map(|_| -50.0);
        let bound = bind_mini(&mut tape, &blk);
        let h_i = tape.constant(Tensor::vector(&[2.0, -4.0]));
        let h_c = tape.constant(Tensor::vector(&[1.0, 1.0, 1.0]));
        let (out, _) = mini_step(&mut tape, h_i, h_c, &bound, Activation::Relu).unwrap();
        for (a, b) in tape.value(out).data().iter().zip(tape.value(h_i).data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn mini_step_gradient_wrt_cross_weight_matches_finite_differences() {
        use crate::numerics::grad_check;
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        let mut rand_t = |r: usize, c: usize| {
            Tensor::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-0.8..0.8)).collect()).unwrap()
        };
        let params = vec![
            rand_t(3, 3), // w
            rand_t(3, 2), // v
            rand_t(3, 1), // b
            rand_t(3, 3), // gate_w
            rand_t(3, 2), // gate_v
            rand_t(3, 1), // gate_b
        ];
        let h_i = rand_t(3, 1);
        let h_c = rand_t(2, 1);
        let err = grad_check(
            |tape, ids| {
                let blk = MiniBlock {
                    w: ids[0],
                    v: ids[1],
                    b: ids[2],
                    gate_w: ids[3],
                    gate_v: ids[4],
                    gate_b: ids[5],
                };
                let hi = tape.constant(h_i.clone());
                let hc = tape.constant(h_c.clone());
                let (out, _) = mini_step(tape, hi, hc, &blk, Activation::Tanh)?;
                let sig = tape.sigmoid(out);
                Ok(tape.sum(sig))
            },
            &params,
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-4, "relative error {err}");
    }

    #[test]
    fn composed_layer_gradients_match_finite_differences() {
        // One full layer of the bundle update (central + 2 minis with
        // gates), every parameter checked, d=4, M=2.
        use crate::numerics::grad_check;
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(43);
        let mut rand_t = |r: usize, c: usize| {
            Tensor::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-0.7..0.7)).collect()).unwrap()
        };
        // central: w, b, u0, u1, gw, gb, gu0, gu1 then two mini blocks
        let mut params = vec![
            rand_t(4, 4),
            rand_t(4, 1),
            rand_t(4, 4),
            rand_t(4, 4),
            rand_t(4, 4),
            rand_t(4, 1),
            rand_t(4, 4),
            rand_t(4, 4),
        ];
        for _ in 0..2 {
            params.push(rand_t(4, 4)); // w
            params.push(rand_t(4, 4)); // v
            params.push(rand_t(4, 1)); // b
            params.push(rand_t(4, 4)); // gate_w
            params.push(rand_t(4, 4)); // gate_v
            params.push(rand_t(4, 1)); // gate_b
        }
        let h_c0 = rand_t(4, 1);
        let h_m0 = rand_t(4, 1);
        let h_m1 = rand_t(4, 1);
        let err = grad_check(
            |tape, ids| {
                let central = CentralBlock {
                    w: ids[0],
                    b: ids[1],
                    u: vec![ids[2], ids[3]],
                    gate_w: ids[4],
                    gate_b: ids[5],
                    gate_u: vec![ids[6], ids[7]],
                };
                let mini = |o: usize| MiniBlock {
                    w: ids[o],
                    v: ids[o + 1],
                    b: ids[o + 2],
                    gate_w: ids[o + 3],
                    gate_v: ids[o + 4],
                    gate_b: ids[o + 5],
                };
                let hc = tape.constant(h_c0.clone());
                let hm0 = tape.constant(h_m0.clone());
                let hm1 = tape.constant(h_m1.clone());
                let (new_c, _) =
                    central_step(tape, hc, &[hm0, hm1], &central, false, Activation::Tanh)?;
                let (new_m0, _) = mini_step(tape, hm0, hc, &mini(8), Activation::Tanh)?;
                let (new_m1, _) = mini_step(tape, hm1, hc, &mini(14), Activation::Tanh)?;
                let s0 = tape.sum(new_c);
                let s1 = tape.sum(new_m0);
                let s2 = tape.sum(new_m1);
                let t = tape.add(s0, s1)?;
                let t = tape.add(t, s2)?;
                let sig = tape.sigmoid(t);
                Ok(tape.sum(sig))
            },
            &params,
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-4, "relative error {err}");
    }

    #[test]
    fn shared_minicolumns_make_central_step_permutation_invariant() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(47);
        let mut rand_t = |r: usize, c: usize| {
            Tensor::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
        };
        let blk = CentralBlock {
            w: rand_t(3, 3),
            b: rand_t(3, 1),
            u: vec![rand_t(3, 2)],
            gate_w: rand_t(3, 3),
            gate_b: rand_t(3, 1),
            gate_u: vec![rand_t(3, 2)],
        };
        let h_c = rand_t(3, 1);
        let minis = [rand_t(2, 1), rand_t(2, 1), rand_t(2, 1)];

        let run = |order: &[usize]| -> Vec<f64> {
            let mut tape = Tape::new();
            let bound = bind_central(&mut tape, &blk);
            let hc = tape.constant(h_c.clone());
            let hm: Vec<NodeId> = order
                .iter()
                .map(|&i| tape.constant(minis[i].clone()))
                .collect();
            let (out, _) =
                central_step(&mut tape, hc, &hm, &bound, true, Activation::Relu).unwrap();
            tape.value(out).data().to_vec()
        };

        let base = run(&[0, 1, 2]);
        for perm in [[0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
            let got = run(&perm);
            for (a, b) in base.iter().zip(got.iter()) {
                assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn forward_with_one_layer_is_the_initial_state() {
        let cfg = BundleConfig {
            n_layers: 1,
            d_central: 3,
            d_mini: 2,
            n_minicolumns: 2,
            ..BundleConfig::default()
        };
        let mut tape = Tape::new();
        let h_c = tape.constant(Tensor::vector(&[1.0, 2.0, 3.0]));
        let h_m = tape.constant(Tensor::vector(&[4.0, 5.0]));
        let trace = bundle_forward(&mut tape, h_c, &[h_m, h_m], &[], &cfg).unwrap();
        assert_eq!(trace.n_layers(), 1);
        assert_eq!(trace.h_c[0], h_c);
        assert_eq!(trace.top_mini(1), h_m);
    }

    #[test]
    fn saturated_gates_telescope_to_identity() {
        // With every gate bias at -50, each layer reproduces its input
        // bit for bit, so the whole column telescopes.
        let cfg = BundleConfig {
            n_layers: 10,
            d_central: 4,
            d_mini: 3,
            n_minicolumns: 2,
            activation: Activation::Tanh,
            ..BundleConfig::default()
        };
        let task = multi_output_task(2, 5);
        let mut params = init_params(&cfg, &task, 99).unwrap();
        params.saturate_gates(-50.0);

        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let h_c = tape.constant(Tensor::vector(&[0.3, -0.2, 0.9, 0.5]));
        let m0 = tape.constant(Tensor::vector(&[0.1, 0.4, -0.6]));
        let m1 = tape.constant(Tensor::vector(&[-0.8, 0.2, 0.7]));
        let body = &bound.output.as_ref().unwrap().body;
        let trace = bundle_forward(&mut tape, h_c, &[m0, m1], body, &cfg).unwrap();
        for t in 0..10 {
            assert_eq!(tape.value(trace.h_c[t]).data(), tape.value(h_c).data());
            assert_eq!(tape.value(trace.h_mini[0][t]).data(), tape.value(m0).data());
            assert_eq!(tape.value(trace.h_mini[1][t]).data(), tape.value(m1).data());
        }
    }

    #[test]
    fn shared_forward_permutes_with_its_inputs() {
        // Permuting (input, column) pairs leaves the central trace
        // unchanged and permutes the mini traces correspondingly.
        let cfg = BundleConfig {
            n_layers: 4,
            d_central: 3,
            d_mini: 2,
            n_minicolumns: 3,
            share_minicolumns: true,
            ..BundleConfig::default()
        };
        let task = multi_output_task(3, 5);
        let params = init_params(&cfg, &task, 17).unwrap();

        let inputs = [
            Tensor::vector(&[0.1, 0.9]),
            Tensor::vector(&[-0.5, 0.3]),
            Tensor::vector(&[0.7, -0.2]),
        ];
        let h_c0 = Tensor::vector(&[0.2, -0.4, 0.6]);

        let run = |order: &[usize]| {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let hc = tape.constant(h_c0.clone());
            let hm: Vec<NodeId> = order
                .iter()
                .map(|&i| tape.constant(inputs[i].clone()))
                .collect();
            let body = &bound.output.as_ref().unwrap().body;
            let trace = bundle_forward(&mut tape, hc, &hm, body, &cfg).unwrap();
            let central: Vec<Vec<f64>> = trace
                .h_c
                .iter()
                .map(|&id| tape.value(id).data().to_vec())
                .collect();
            let minis: Vec<Vec<f64>> = (0..3)
                .map(|i| tape.value(trace.top_mini(i)).data().to_vec())
                .collect();
            (central, minis)
        };

        let (central_base, minis_base) = run(&[0, 1, 2]);
        let perm = [2usize, 0, 1];
        let (central_perm, minis_perm) = run(&perm);
        for (row_a, row_b) in central_base.iter().zip(central_perm.iter()) {
            for (a, b) in row_a.iter().zip(row_b.iter()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
        for (slot, &src) in perm.iter().enumerate() {
            for (a, b) in minis_perm[slot].iter().zip(minis_base[src].iter()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn gate_coupling_reconstructs_the_blend() {
        // Recompute the candidate state independently with plain tensor
        // math and confirm h_t = alpha*candidate + (1-alpha)*h_prev.
        let cfg = BundleConfig {
            n_layers: 3,
            d_central: 3,
            d_mini: 2,
            n_minicolumns: 2,
            share_layers: true,
            ..BundleConfig::default()
        };
        let task = multi_output_task(2, 4);
        let params = init_params(&cfg, &task, 5).unwrap();

        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let h_c = tape.constant(Tensor::vector(&[0.4, -0.1, 0.8]));
        let m0 = tape.constant(Tensor::vector(&[0.5, -0.5]));
        let m1 = tape.constant(Tensor::vector(&[0.2, 0.9]));
        let body = &bound.output.as_ref().unwrap().body;
        let trace = bundle_forward(&mut tape, h_c, &[m0, m1], body, &cfg).unwrap();

        let blk = &params.output.as_ref().unwrap().body[0];
        for t in 1..3 {
            let prev_c = tape.value(trace.h_c[t - 1]).clone();
            let prev_m: Vec<Tensor> = (0..2)
                .map(|i| tape.value(trace.h_mini[i][t - 1]).clone())
                .collect();
            // candidate = relu(W h + mean_i(U_i h_i) + b)
            let mut agg = Tensor::zeros(3, 1);
            for (i, m) in prev_m.iter().enumerate() {
                agg.add_scaled_in_place(&blk.central.u[i].matmul(m).unwrap(), 0.5);
            }
            let mut pre = blk.central.w.matmul(&prev_c).unwrap();
            pre.add_scaled_in_place(&agg, 1.0);
            pre.add_scaled_in_place(&blk.central.b, 1.0);
            let candidate = pre.map(|v| if v > 0.0 { v } else { 0.0 });

            let alpha = tape.value(trace.gates_central[t - 1]).clone();
            let h_t = tape.value(trace.h_c[t]).clone();
            for j in 0..3 {
                let a = alpha.data()[j];
                assert!(a > 0.0 && a < 1.0);
                let expect = a * candidate.data()[j] + (1.0 - a) * prev_c.data()[j];
                assert!((h_t.data()[j] - expect).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn init_is_deterministic_in_the_seed() {
        let cfg = BundleConfig {
            n_layers: 4,
            d_central: 5,
            d_mini: 3,
            n_minicolumns: 2,
            ..BundleConfig::default()
        };
        let task = multi_output_task(2, 7);
        let a = init_params(&cfg, &task, 123).unwrap();
        let b = init_params(&cfg, &task, 123).unwrap();
        assert_eq!(a, b);
        let c = init_params(&cfg, &task, 124).unwrap();
        assert_ne!(a, c);
        // Biases zero, gate biases -1.
        for (name, t) in a.tensors() {
            if name.ends_with(".gate_bias") {
                assert!(t.data().iter().all(|&v| v == -1.0), "{name}");
            } else if name.ends_with(".bias") {
                assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
            }
        }
    }

    #[test]
    fn bind_order_matches_tensor_order() {
        let cfg = BundleConfig {
            n_layers: 3,
            d_central: 4,
            d_mini: 2,
            n_minicolumns: 3,
            share_minicolumns: true,
            embed_dim: Some(2),
            ..BundleConfig::default()
        };
        let task = TaskSpec {
            kind: TaskKind::MultiOutput,
            inputs: vec![6],
            outputs: vec![2, 2, 2],
            projection_dim: None,
            use_label_embedding: true,
            bags: false,
        };
        let mut params = init_params(&cfg, &task, 3).unwrap();
        let mut tape = Tape::new();
        let _ = params.bind(&mut tape);
        let names: Vec<String> = params.tensors().iter().map(|(n, _)| n.clone()).collect();
        assert_eq!(tape.param_nodes().len(), names.len());
        for (k, &id) in tape.param_nodes().iter().enumerate() {
            assert_eq!(tape.value(id), params.tensors()[k].1);
        }
        let mut_names: Vec<String> = params.tensors_mut().iter().map(|(n, _)| n.clone()).collect();
        assert_eq!(names, mut_names);
    }

    #[test]
    fn unit_sized_body_block_count_matches_enumeration() {
        // d_c = d_m = 1, M = 1, T = 2, unshared: one body block holding
        // central {w,b,u,gw,gb,gu} and one mini {w,v,b,gw,gv,gb} -> 12.
        let cfg = BundleConfig {
            n_layers: 2,
            d_central: 1,
            d_mini: 1,
            n_minicolumns: 1,
            share_layers: false,
            ..BundleConfig::default()
        };
        let task = multi_output_task(1, 1);
        let params = init_params(&cfg, &task, 0).unwrap();
        assert_eq!(params.body_param_count(), 12);
    }

    #[test]
    fn shared_minicolumn_body_count_is_constant_in_m() {
        let body_count = |m: usize| {
            let cfg = BundleConfig {
                n_layers: 5,
                d_central: 6,
                d_mini: 4,
                n_minicolumns: m,
                share_minicolumns: true,
                embed_dim: Some(3),
                ..BundleConfig::default()
            };
            let task = TaskSpec {
                kind: TaskKind::MultiOutput,
                inputs: vec![8],
                outputs: vec![2; m],
                projection_dim: None,
                use_label_embedding: true,
                bags: false,
            };
            init_params(&cfg, &task, 0).unwrap().body_param_count()
        };
        assert_eq!(body_count(10), body_count(100));
    }

    #[test]
    fn unshared_body_count_grows_affinely_with_per_column_slope() {
        let (d_c, d_m, t_layers) = (6usize, 4usize, 5usize);
        let body_count = |m: usize| {
            let cfg = BundleConfig {
                n_layers: t_layers,
                d_central: d_c,
                d_mini: d_m,
                n_minicolumns: m,
                share_layers: true,
                share_minicolumns: false,
                ..BundleConfig::default()
            };
            let task = multi_output_task(m, 8);
            init_params(&cfg, &task, 0).unwrap().body_param_count()
        };
        // Per extra column and per block: mini {w,v,b,gate_w,gate_v,gate_b}
        // plus the central u and gate_u read-ins.
        let mini_block = d_m * d_m + d_m * d_c + d_m + d_m * d_m + d_m * d_c + d_m;
        let central_read_ins = 2 * d_c * d_m;
        let slope = mini_block + central_read_ins; // one shared-layer block
        assert_eq!(body_count(3) - body_count(2), slope);
        assert_eq!(body_count(7) - body_count(6), slope);
        // Affine overall: count(m) = count(2) + (m-2)*slope.
        assert_eq!(body_count(9), body_count(2) + 7 * slope);
    }

    #[test]
    fn unshared_layers_multiply_body_blocks() {
        let count_for = |share: bool, t: usize| {
            let cfg = BundleConfig {
                n_layers: t,
                d_central: 3,
                d_mini: 2,
                n_minicolumns: 2,
                share_layers: share,
                ..BundleConfig::default()
            };
            let task = multi_output_task(2, 4);
            init_params(&cfg, &task, 0).unwrap().body_param_count()
        };
        assert_eq!(count_for(false, 10), 9 * count_for(true, 10));
    }

    #[test]
    fn embed_labels_extracts_columns() {
        let mut tape = Tape::new();
        let e = tape.constant(Tensor::identity(3));
        let cols = embed_labels(&mut tape, e, 3).unwrap();
        assert_eq!(tape.value(cols[1]).data(), &[0.0, 1.0, 0.0]);
        assert!(embed_labels(&mut tape, e, 4).is_err());
    }

    #[test]
    fn config_validation_rejects_bad_settings() {
        let mut cfg = BundleConfig::default();
        cfg.n_layers = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = BundleConfig::default();
        cfg.dropout_rate = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = BundleConfig::default();
        cfg.embed_dim = Some(0);
        assert!(cfg.validate().is_err());
    }
}
