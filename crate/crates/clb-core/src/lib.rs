//! Column-bundle networks.
//!
//! A column bundle couples a single *central column* to `M` thin
//! *mini-columns*: every hidden layer, the central column aggregates the
//! mini-column states and redistributes its own state back to them, with
//! highway gates blending each column's candidate update into its previous
//! state. One mini-column per input part (view or bag instance) or per
//! output target turns the same body into a multi-output, multi-input, or
//! combined multi-input/multi-output predictor.
//!
//! The crate is `no_std` (with `alloc`) and carries no IO: file formats and
//! the command-line frontend live in the companion `clb` crate.
//!
//! - [`numerics`] — dense `f64` tensors and a tape for reverse-mode
//!   differentiation, plus a finite-difference gradient checker
//! - [`bundle`] — the column architecture: layer blocks, highway gates,
//!   parameter sharing across layers and across mini-columns, label
//!   embeddings
//! - [`tasks`] — first-layer wirings, prediction heads, the weighted
//!   multi-label loss, and a per-label highway-network baseline
//! - [`training`] — class weighting, Adam/RMSprop, the validation-driven
//!   learning-rate schedule, and the multi-run protocol
//! - [`data`] — in-memory datasets, synthetic generators, Micro-F1 and
//!   Hamming loss, embedding/co-occurrence analysis

#![no_std]

extern crate alloc;

#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod bundle;
pub mod data;
pub mod error;
pub mod numerics;
pub mod tasks;
pub mod training;

pub use bundle::{Activation, BundleConfig, BundleParams, ForwardTrace};
pub use data::{Dataset, DatasetMeta, FeatureVec, MetricsReport, Sample, Split};
pub use error::{Error, Result};
pub use numerics::{grad_check, NodeId, Tape, Tensor};
pub use tasks::{ClbModel, HwnModel, Prediction, TaskKind, TaskSpec};
pub use training::{
    evaluate, multi_run, train, ClassWeights, EpochRecord, Model, MultiRunReport, OptimizerKind,
    Phase, TrainConfig, TrainReport,
};
