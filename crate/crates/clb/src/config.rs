//! Experiment configuration files.
//!
//! A structured text grammar, sections of `key = value` lines:
//!
//! ```text
//! # comment
//! [task]
//! kind = multi_output            # multi_output | multi_input | multi_in_out
//! use_label_embedding = true
//! # projection_dim = 8           # input-side tasks only
//!
//! [bundle]
//! n_layers = 10
//! d_central = 16
//! d_mini = 8
//! share_layers = true
//! share_minicolumns = true
//! embed_dim = 4
//! activation = relu              # relu | tanh
//! dropout = 0.1
//!
//! [train]
//! lr0 = 0.001
//! patience = 10
//! max_halvings = 4
//! max_epochs = 500
//! optimizer = adam               # adam | rmsprop
//! batch_size = 32
//! seed = 1
//! runs = 5
//!
//! [data]
//! path = data/train.mll
//!
//! [output]
//! dir = runs/exp1
//! ```
//!
//! Command-line `--set section.key=value` flags override file values.
//! Input/output part counts and dimensions are never written in the
//! config; they come from the dataset file itself.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clb_core::tasks::TaskKind;
use clb_core::training::OptimizerKind;
use clb_core::{Activation, BundleConfig, DatasetMeta, TaskSpec, TrainConfig};

use crate::error::{ClbError, Result};

/// Flat `section.key -> value` view of a config file.
#[derive(Debug, Clone, Default)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    /// Parses the section/key-value grammar; duplicate keys and lines
    /// outside any section are errors.
    pub fn parse(text: &str, path: &Path) -> Result<ConfigMap> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (ln, raw) in text.lines().enumerate() {
            let lineno = ln + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| ClbError::parse(path, lineno, "unterminated section"))?;
                section = name.trim().to_string();
                if section.is_empty() {
                    return Err(ClbError::parse(path, lineno, "empty section name"));
                }
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ClbError::parse(path, lineno, "expected `key = value`"))?;
            if section.is_empty() {
                return Err(ClbError::parse(path, lineno, "key outside any [section]"));
            }
            let full = format!("{section}.{}", key.trim());
            if entries
                .insert(full.clone(), value.trim().to_string())
                .is_some()
            {
                return Err(ClbError::parse(path, lineno, format!("duplicate key `{full}`")));
            }
        }
        Ok(ConfigMap { entries })
    }

    pub fn load(path: &Path) -> Result<ConfigMap> {
        let text = std::fs::read_to_string(path).map_err(|e| ClbError::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Applies `section.key=value` overrides (command-line flags win over
    /// file values).
    pub fn apply_overrides(&mut self, sets: &[String]) -> Result<()> {
        for s in sets {
            let (key, value) = s.split_once('=').ok_or_else(|| {
                ClbError::Config(format!("--set needs `section.key=value`, got `{s}`"))
            })?;
            if !key.contains('.') {
                return Err(ClbError::Config(format!(
                    "--set key `{key}` lacks a section prefix"
                )));
            }
            self.entries
                .insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(())
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    fn parse_as<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| ClbError::Config(format!("bad value for `{key}`: `{v}`"))),
        }
    }

    fn parse_opt<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| ClbError::Config(format!("bad value for `{key}`: `{v}`"))),
        }
    }
}

/// A fully parsed experiment: everything needed to build model, trainer,
/// and outputs once the dataset supplies part/output shapes.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub task_kind: TaskKind,
    pub use_label_embedding: bool,
    pub projection_dim: Option<usize>,
    pub bundle_template: BundleConfig,
    pub train: TrainConfig,
    pub data_path: PathBuf,
    pub out_dir: PathBuf,
}

impl RunSpec {
    /// Builds a run spec from a parsed map, validating every field and
    /// rejecting unknown keys.
    pub fn from_map(mut map: ConfigMap) -> Result<RunSpec> {
        let kind_str = map
            .take("task.kind")
            .ok_or_else(|| ClbError::Config("missing `task.kind`".into()))?;
        let task_kind = TaskKind::parse(&kind_str)?;
        let use_label_embedding = map.parse_as("task.use_label_embedding", false)?;
        let projection_dim = map.parse_opt("task.projection_dim")?;

        let activation = match map.take("bundle.activation") {
            Some(v) => Activation::parse(&v)?,
            None => Activation::Relu,
        };
        let bundle_template = BundleConfig {
            n_layers: map.parse_as("bundle.n_layers", 10)?,
            d_central: map.parse_as("bundle.d_central", 16)?,
            d_mini: map.parse_as("bundle.d_mini", 8)?,
            n_minicolumns: 1, // derived from the dataset in `resolve`
            share_layers: map.parse_as("bundle.share_layers", true)?,
            share_minicolumns: map.parse_as("bundle.share_minicolumns", false)?,
            embed_dim: map.parse_opt("bundle.embed_dim")?,
            activation,
            dropout_rate: map.parse_as("bundle.dropout", 0.0)?,
        };

        let optimizer = match map.take("train.optimizer") {
            Some(v) => OptimizerKind::parse(&v)?,
            None => OptimizerKind::Adam,
        };
        let defaults = TrainConfig::default();
        let train = TrainConfig {
            lr0: map.parse_as("train.lr0", defaults.lr0)?,
            patience_epochs: map.parse_as("train.patience", defaults.patience_epochs)?,
            max_halvings: map.parse_as("train.max_halvings", defaults.max_halvings)?,
            max_epochs: map.parse_as("train.max_epochs", defaults.max_epochs)?,
            optimizer,
            batch_size: map.parse_as("train.batch_size", defaults.batch_size)?,
            seed: map.parse_as("train.seed", defaults.seed)?,
            n_runs: map.parse_as("train.runs", defaults.n_runs)?,
        };
        train.validate()?;

        let data_path = map
            .take("data.path")
            .ok_or_else(|| ClbError::Config("missing `data.path`".into()))?;
        let out_dir = map.take("output.dir").unwrap_or_else(|| "run".to_string());

        if let Some(stray) = map.entries.keys().next() {
            return Err(ClbError::Config(format!("unknown config key `{stray}`")));
        }
        Ok(RunSpec {
            task_kind,
            use_label_embedding,
            projection_dim,
            bundle_template,
            train,
            data_path: PathBuf::from(data_path),
            out_dir: PathBuf::from(out_dir),
        })
    }

    /// Finishes the configuration against the dataset's shape metadata,
    /// re-validating every cross-field invariant.
    pub fn resolve(&self, meta: &DatasetMeta) -> Result<(BundleConfig, TaskSpec)> {
        let task = TaskSpec {
            kind: self.task_kind,
            inputs: meta.part_dims.clone(),
            outputs: meta.arities.clone(),
            projection_dim: self.projection_dim,
            use_label_embedding: self.use_label_embedding,
            bags: meta.bags,
        };
        let mut bundle = self.bundle_template.clone();
        bundle.n_minicolumns = match self.task_kind {
            TaskKind::MultiOutput | TaskKind::MultiInOut => meta.n_outputs(),
            TaskKind::MultiInput => {
                if meta.bags {
                    1
                } else {
                    meta.n_inputs()
                }
            }
        };
        bundle.validate()?;
        task.validate()?;
        task.check_config(&bundle)?;
        Ok((bundle, task))
    }
}
