//! IO companion for the `clb-core` column-bundle library: dataset file
//! formats, binary checkpoints, run logs, matrix dumps, the experiment
//! config grammar, and the command implementations behind the `clb`
//! binary.
//!
//! The core crate is re-exported as [`core`], so `clb` is the only
//! dependency an application needs.

pub use clb_core as core;

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dumps;
pub mod error;
pub mod formats;
pub mod runlog;

pub use error::{ClbError, Result};
