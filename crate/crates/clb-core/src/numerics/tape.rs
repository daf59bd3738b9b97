//! Wengert tape: eager forward evaluation with recorded backward rules.
//!
//! Every operation appends a node holding its value, its operation tag and
//! the ids of its parents, so the node list is already in topological order
//! and the backward pass is a single reverse sweep. A tape lives for one
//! forward/backward cycle (one mini-batch); gradient accumulators start at
//! zero by construction and a second `backward` call is rejected.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Probabilities below this are clamped before taking logs.
pub const LOG_CLAMP: f64 = 1e-12;

/// Index of a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    /// Leaf registered with `requires_grad`.
    Leaf,
    /// Leaf that never receives gradient (inputs, masks, targets).
    Constant,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    Hadamard(NodeId, NodeId),
    OneMinus(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    MeanOf(Vec<NodeId>),
    ColumnOf(NodeId, usize),
    Pick(NodeId, usize),
    Sum(NodeId),
    Softmax(NodeId),
    LnClamped(NodeId),
}

struct Node {
    value: Tensor,
    grad: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording tape for reverse-mode differentiation.
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<NodeId>,
    backward_done: bool,
    clamp_events: usize,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: Vec::new(),
            backward_done: false,
            clamp_events: 0,
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        let grad = Tensor::zeros(value.rows(), value.cols());
        self.nodes.push(Node {
            value,
            grad,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Register a trainable leaf. Leaves are remembered in registration
    /// order; see [`Tape::param_nodes`].
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        let id = self.push(value, Op::Leaf, true);
        self.params.push(id);
        id
    }

    /// Register a non-trainable input.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Constant, false)
    }

    /// Trainable leaves in registration order.
    pub fn param_nodes(&self) -> &[NodeId] {
        &self.params
    }

    /// Number of nodes currently on the tape.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// How many log-clamp events occurred in forward passes so far.
    pub fn clamp_events(&self) -> usize {
        self.clamp_events
    }

    /// Value of a node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Accumulated gradient of a node (zeros before `backward`).
    pub fn grad(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].grad
    }

    /// Matrix product.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.nodes[a.0].value.matmul(&self.nodes[b.0].value)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// Elementwise sum; shapes must match.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape() != vb.shape() {
            return Err(Error::Shape {
                op: "add",
                lhs: va.shape(),
                rhs: vb.shape(),
            });
        }
        let mut value = va.clone();
        value.add_scaled_in_place(vb, 1.0);
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Multiply every entry by a fixed scalar.
    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.nodes[a.0].value.map(|v| c * v);
        let rg = self.requires(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    /// Elementwise product; shapes must match.
    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape() != vb.shape() {
            return Err(Error::Shape {
                op: "hadamard",
                lhs: va.shape(),
                rhs: vb.shape(),
            });
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data().iter())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::from_vec(va.rows(), va.cols(), data)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::Hadamard(a, b), rg))
    }

    /// `1 - x` elementwise; the carry coefficient of a highway gate.
    pub fn one_minus(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.map(|v| 1.0 - v);
        let rg = self.requires(a);
        self.push(value, Op::OneMinus(a), rg)
    }

    /// Logistic sigmoid, strictly inside (0, 1).
    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.map(sigmoid_scalar);
        let rg = self.requires(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.map(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.requires(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.map(libm::tanh);
        let rg = self.requires(a);
        self.push(value, Op::Tanh(a), rg)
    }

    /// Elementwise arithmetic mean of the listed nodes, summed in list
    /// order so evaluation is deterministic.
    pub fn mean_of(&mut self, nodes: &[NodeId]) -> Result<NodeId> {
        let first = *nodes
            .first()
            .ok_or_else(|| Error::Usage("mean_of: empty node list".into()))?;
        let shape = self.nodes[first.0].value.shape();
        let mut value = self.nodes[first.0].value.clone();
        let mut rg = self.requires(first);
        for &id in &nodes[1..] {
            let v = &self.nodes[id.0].value;
            if v.shape() != shape {
                return Err(Error::Shape {
                    op: "mean_of",
                    lhs: shape,
                    rhs: v.shape(),
                });
            }
            value.add_scaled_in_place(v, 1.0);
            rg |= self.requires(id);
        }
        let inv = 1.0 / nodes.len() as f64;
        let value = value.map(|v| v * inv);
        Ok(self.push(value, Op::MeanOf(nodes.to_vec()), rg))
    }

    /// Column `i` of a matrix node as a column vector. The backward rule
    /// scatters gradient into that column only.
    pub fn column_of(&mut self, e: NodeId, i: usize) -> Result<NodeId> {
        let v = &self.nodes[e.0].value;
        if i >= v.cols() {
            return Err(Error::Usage(alloc::format!(
                "column_of: column {i} out of range for {}x{}",
                v.rows(),
                v.cols()
            )));
        }
        let mut col = Tensor::zeros(v.rows(), 1);
        for r in 0..v.rows() {
            col.set(r, 0, v.get(r, i));
        }
        let rg = self.requires(e);
        Ok(self.push(col, Op::ColumnOf(e, i), rg))
    }

    /// Single entry (flat row-major index) as a `1 x 1` node.
    pub fn pick(&mut self, a: NodeId, index: usize) -> Result<NodeId> {
        let v = &self.nodes[a.0].value;
        if index >= v.len() {
            return Err(Error::Usage(alloc::format!(
                "pick: index {index} out of range for {}x{}",
                v.rows(),
                v.cols()
            )));
        }
        let value = Tensor::from_vec(1, 1, alloc::vec![v.data()[index]])?;
        let rg = self.requires(a);
        Ok(self.push(value, Op::Pick(a, index), rg))
    }

    /// Sum of all entries as a `1 x 1` node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let total: f64 = self.nodes[a.0].value.data().iter().sum();
        let value = Tensor::from_vec(1, 1, alloc::vec![total]).expect("1x1");
        let rg = self.requires(a);
        self.push(value, Op::Sum(a), rg)
    }

    /// Softmax over a column vector (max-shifted for stability); the
    /// output sums to one.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let v = &self.nodes[a.0].value;
        if v.cols() != 1 {
            return Err(Error::Shape {
                op: "softmax",
                lhs: v.shape(),
                rhs: (v.rows(), 1),
            });
        }
        let max = v.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = v.data().iter().map(|&x| libm::exp(x - max)).collect();
        let total: f64 = exps.iter().sum();
        let value = Tensor::from_vec(v.rows(), 1, exps.iter().map(|e| e / total).collect())?;
        let rg = self.requires(a);
        Ok(self.push(value, Op::Softmax(a), rg))
    }

    /// `ln(max(x, LOG_CLAMP))` elementwise. Clamping keeps the loss finite
    /// for zero probabilities; each clamped entry bumps
    /// [`Tape::clamp_events`]. Gradient is zero where the clamp engaged.
    pub fn ln_clamped(&mut self, a: NodeId) -> NodeId {
        let clamped = self
            .nodes[a.0]
            .value
            .data()
            .iter()
            .filter(|&&v| v < LOG_CLAMP)
            .count();
        let value = self.nodes[a.0].value.map(|v| libm::log(v.max(LOG_CLAMP)));
        self.clamp_events += clamped;
        let rg = self.requires(a);
        self.push(value, Op::LnClamped(a), rg)
    }

    /// Reverse sweep from a scalar loss node. Gradients accumulate into
    /// every node with `requires_grad`; a second call without a fresh tape
    /// is rejected.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.backward_done {
            return Err(Error::Usage(
                "backward already ran on this tape; build a fresh tape to reset gradients".into(),
            ));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::Usage("backward: loss node is not on this tape".into()));
        }
        if self.nodes[loss.0].value.shape() != (1, 1) {
            let (r, c) = self.nodes[loss.0].value.shape();
            return Err(Error::Usage(alloc::format!(
                "backward: loss must be a 1x1 scalar, got {r}x{c}"
            )));
        }
        self.backward_done = true;
        self.nodes[loss.0].grad.fill(1.0);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            // Take the node's gradient out so parents can be borrowed mutably.
            let g = core::mem::replace(&mut self.nodes[i].grad, Tensor::zeros(0, 0));
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf | Op::Constant => {}
                Op::MatMul(a, b) => {
                    if self.requires(a) {
                        let bt = self.nodes[b.0].value.transpose();
                        let da = g.matmul(&bt).expect("shapes fixed by forward");
                        self.nodes[a.0].grad.add_scaled_in_place(&da, 1.0);
                    }
                    if self.requires(b) {
                        let at = self.nodes[a.0].value.transpose();
                        let db = at.matmul(&g).expect("shapes fixed by forward");
                        self.nodes[b.0].grad.add_scaled_in_place(&db, 1.0);
                    }
                }
                Op::Add(a, b) => {
                    if self.requires(a) {
                        self.nodes[a.0].grad.add_scaled_in_place(&g, 1.0);
                    }
                    if self.requires(b) {
                        self.nodes[b.0].grad.add_scaled_in_place(&g, 1.0);
                    }
                }
                Op::Scale(a, c) => {
                    if self.requires(a) {
                        self.nodes[a.0].grad.add_scaled_in_place(&g, c);
                    }
                }
                Op::Hadamard(a, b) => {
                    if self.requires(a) {
                        let other = self.nodes[b.0].value.clone();
                        acc_elementwise(&mut self.nodes[a.0].grad, &g, |gi, i| {
                            gi * other.data()[i]
                        });
                    }
                    if self.requires(b) {
                        let other = self.nodes[a.0].value.clone();
                        acc_elementwise(&mut self.nodes[b.0].grad, &g, |gi, i| {
                            gi * other.data()[i]
                        });
                    }
                }
                Op::OneMinus(a) => {
                    if self.requires(a) {
                        self.nodes[a.0].grad.add_scaled_in_place(&g, -1.0);
                    }
                }
                Op::Sigmoid(a) => {
                    if self.requires(a) {
                        let y = core::mem::replace(&mut self.nodes[i].value, Tensor::zeros(0, 0));
                        acc_elementwise(&mut self.nodes[a.0].grad, &g, |gi, idx| {
                            let s = y.data()[idx];
                            gi * s * (1.0 - s)
                        });
                        self.nodes[i].value = y;
                    }
                }
                Op::Relu(a) => {
                    if self.requires(a) {
                        let x = self.nodes[a.0].value.clone();
                        acc_elementwise(&mut self.nodes[a.0].grad, &g, |gi, idx| {
                            if x.data()[idx] > 0.0 {
                                gi
                            } else {
                                0.0
                            }
                        });
                    }
                }
                Op::Tanh(a) => {
                    if self.requires(a) {
                        let y = core::mem::replace(&mut self.nodes[i].value, Tensor::zeros(0, 0));
                        acc_elementwise(&mut self.nodes[a.0].grad, &g, |gi, idx| {
                            let t = y.data()[idx];
                            gi * (1.0 - t * t)
                        });
                        self.nodes[i].value = y;
                    }
                }
                Op::MeanOf(ids) => {
                    let inv = 1.0 / ids.len() as f64;
                    for id in ids {
                        if self.requires(id) {
                            self.nodes[id.0].grad.add_scaled_in_place(&g, inv);
                        }
                    }
                }
                Op::ColumnOf(e, col) => {
                    if self.requires(e) {
                        let ge = &mut self.nodes[e.0].grad;
                        for r in 0..g.rows() {
                            let cur = ge.get(r, col);
                            ge.set(r, col, cur + g.get(r, 0));
                        }
                    }
                }
                Op::Pick(a, index) => {
                    if self.requires(a) {
                        let ga = &mut self.nodes[a.0].grad;
                        ga.data_mut()[index] += g.data()[0];
                    }
                }
                Op::Sum(a) => {
                    if self.requires(a) {
                        let s = g.data()[0];
                        for v in self.nodes[a.0].grad.data_mut() {
                            *v += s;
                        }
                    }
                }
                Op::Softmax(a) => {
                    if self.requires(a) {
                        let y = core::mem::replace(&mut self.nodes[i].value, Tensor::zeros(0, 0));
                        let dot: f64 = g
                            .data()
                            .iter()
                            .zip(y.data().iter())
                            .map(|(gi, yi)| gi * yi)
                            .sum();
                        acc_elementwise(&mut self.nodes[a.0].grad, &g, |gi, idx| {
                            y.data()[idx] * (gi - dot)
                        });
                        self.nodes[i].value = y;
                    }
                }
                Op::LnClamped(a) => {
                    if self.requires(a) {
                        let x = self.nodes[a.0].value.clone();
                        acc_elementwise(&mut self.nodes[a.0].grad, &g, |gi, idx| {
                            let v = x.data()[idx];
                            if v < LOG_CLAMP {
                                0.0
                            } else {
                                gi / v
                            }
                        });
                    }
                }
            }
            self.nodes[i].grad = g;
        }
        Ok(())
    }
}

/// `grad[k] += f(g[k], k)` over all entries.
fn acc_elementwise(grad: &mut Tensor, g: &Tensor, f: impl Fn(f64, usize) -> f64) {
    for (k, gv) in g.data().iter().enumerate() {
        grad.data_mut()[k] += f(*gv, k);
    }
}

/// Numerically stable logistic function. `exp` underflows for |x| beyond
/// ~745, so the result is pinned to the nearest representable values inside
/// (0, 1) to keep the output strictly inside the open interval.
pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}
