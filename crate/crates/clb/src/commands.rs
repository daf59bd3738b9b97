//! Implementations of the CLI verbs. Each returns the process exit code:
//! 0 on success, 2 for usage/config/schema problems, 3 for numeric
//! failures (training divergence).

use std::fs;
use std::path::{Path, PathBuf};

use clb_core::data::{
    embedding_similarity_matrix, gen_synthetic, hidden_dynamics, label_cooccurrence_matrix,
    SynthKind, SynthSpec,
};
use clb_core::training::{evaluate, multi_run, train};
use clb_core::{ClbModel, Dataset, Split};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{ConfigMap, RunSpec};
use crate::dumps::write_grid;
use crate::error::{ClbError, Result};
use crate::formats::load_auto;
use crate::runlog::{format_metrics, write_metrics, write_runlog};

/// Output directory precedence: explicit flag, then the `CLB_OUT_DIR`
/// environment variable, then the config file value.
fn resolve_out_dir(from_config: &Path, flag: Option<&Path>) -> PathBuf {
    if let Some(dir) = flag {
        return dir.to_path_buf();
    }
    if let Ok(dir) = std::env::var("CLB_OUT_DIR") {
        if !dir.is_empty() {
            return PathBuf::from(dir);
        }
    }
    from_config.to_path_buf()
}

fn load_spec(config: &Path, sets: &[String]) -> Result<RunSpec> {
    let mut map = ConfigMap::load(config)?;
    map.apply_overrides(sets)?;
    RunSpec::from_map(map)
}

/// Trains one model per the config and writes checkpoint, run log, and
/// test metrics into the output directory.
pub fn cmd_train(config: &Path, sets: &[String], out: Option<&Path>) -> Result<i32> {
    let spec = load_spec(config, sets)?;
    let out_dir = resolve_out_dir(&spec.out_dir, out);
    let data = load_auto(&spec.data_path)?;
    let (bundle, task) = spec.resolve(&data.meta)?;
    let mut model = ClbModel::new(bundle, task, spec.train.seed)?;
    let report = train(&mut model, &data, &spec.train)?;

    fs::create_dir_all(&out_dir).map_err(|e| ClbError::io(&out_dir, e))?;
    save_checkpoint(&model, &out_dir.join("checkpoint.clb"))?;
    write_runlog(&report, &out_dir.join("runlog.txt"))?;
    let metrics = evaluate(&model, &data, Split::Test)?;
    write_metrics(&metrics, &out_dir.join("metrics.txt"))?;
    print!("{}", format_metrics(&metrics));

    if let Some(msg) = report.diverged {
        eprintln!("training diverged: {msg} (best checkpoint kept)");
        return Ok(3);
    }
    Ok(0)
}

fn check_compat(model: &ClbModel, data: &Dataset) -> Result<()> {
    if model.task.inputs != data.meta.part_dims
        || model.task.outputs != data.meta.arities
        || model.task.bags != data.meta.bags
    {
        return Err(ClbError::Schema(format!(
            "checkpoint trained for inputs {:?} / outputs {:?} (bags={}), dataset has {:?} / {:?} (bags={})",
            model.task.inputs,
            model.task.outputs,
            model.task.bags,
            data.meta.part_dims,
            data.meta.arities,
            data.meta.bags
        )));
    }
    Ok(())
}

/// Evaluates a checkpoint on a dataset's test split, or (with `--config`
/// and `--runs`) trains fresh models under the multi-run protocol and
/// prints mean and standard deviation of the test metrics.
pub fn cmd_eval(
    checkpoint: Option<&Path>,
    data: Option<&Path>,
    config: Option<&Path>,
    runs: Option<usize>,
    sets: &[String],
) -> Result<i32> {
    match (checkpoint, config) {
        (Some(ckpt), None) => {
            let data_path = data.ok_or_else(|| {
                ClbError::Config("eval with --checkpoint also needs --data".into())
            })?;
            let model = load_checkpoint(ckpt)?;
            let dataset = load_auto(data_path)?;
            check_compat(&model, &dataset)?;
            let metrics = evaluate(&model, &dataset, Split::Test)?;
            print!("{}", format_metrics(&metrics));
            Ok(0)
        }
        (None, Some(cfg_path)) => {
            let spec = load_spec(cfg_path, sets)?;
            let dataset = load_auto(&spec.data_path)?;
            let (bundle, task) = spec.resolve(&dataset.meta)?;
            let mut tcfg = spec.train.clone();
            if let Some(n) = runs {
                tcfg.n_runs = n;
            }
            let report = multi_run(
                |seed| ClbModel::new(bundle.clone(), task.clone(), seed),
                &dataset,
                &tcfg,
                Split::Test,
            )?;
            println!("runs={}", report.metrics.len());
            println!("micro_f1_mean={}", report.mean_micro_f1);
            println!("micro_f1_std={}", report.std_micro_f1);
            println!("hamming_loss_mean={}", report.mean_hamming);
            println!("hamming_loss_std={}", report.std_hamming);
            Ok(0)
        }
        _ => Err(ClbError::Config(
            "eval takes either --checkpoint with --data, or --config (optionally --runs)".into(),
        )),
    }
}

/// What `inspect` should extract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InspectWhat {
    Embeddings,
    Hidden,
}

impl InspectWhat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "embeddings" => Ok(InspectWhat::Embeddings),
            "hidden" => Ok(InspectWhat::Hidden),
            other => Err(ClbError::Config(format!(
                "inspect mode `{other}` (use `embeddings` or `hidden`)"
            ))),
        }
    }
}

/// Writes analysis grids: the normalized embedding-similarity and label
/// co-occurrence matrices, or the per-column hidden-state dynamics of one
/// sample.
pub fn cmd_inspect(
    checkpoint: &Path,
    data: &Path,
    what: InspectWhat,
    sample: usize,
    out: &Path,
) -> Result<i32> {
    let model = load_checkpoint(checkpoint)?;
    let dataset = load_auto(data)?;
    check_compat(&model, &dataset)?;
    fs::create_dir_all(out).map_err(|e| ClbError::io(out, e))?;

    match what {
        InspectWhat::Embeddings => {
            let embed = model.params.embedding().ok_or_else(|| {
                ClbError::Config("this checkpoint has no label embedding".into())
            })?;
            let (sim, flagged) = embedding_similarity_matrix(embed);
            if !flagged.is_empty() {
                eprintln!("warning: zero-norm embedding columns: {flagged:?}");
            }
            write_grid(&sim, &out.join("embedding_similarity.txt"))?;
            let targets: Vec<Vec<usize>> =
                dataset.samples.iter().map(|s| s.targets.clone()).collect();
            let cooc = label_cooccurrence_matrix(&targets, dataset.meta.n_outputs())?;
            write_grid(&cooc, &out.join("label_cooccurrence.txt"))?;
        }
        InspectWhat::Hidden => {
            let s = dataset.samples.get(sample).ok_or_else(|| {
                ClbError::Config(format!(
                    "sample index {sample} out of range ({} samples)",
                    dataset.samples.len()
                ))
            })?;
            let (tape, pass) = model.trace(s)?;
            let two_stages = pass.input_trace.is_some() && pass.output_trace.is_some();
            for (trace, prefix) in [
                (pass.input_trace.as_ref(), "in_"),
                (pass.output_trace.as_ref(), "out_"),
            ] {
                let Some(trace) = trace else { continue };
                let prefix = if two_stages { prefix } else { "" };
                for (name, grid) in hidden_dynamics(&tape, trace) {
                    write_grid(&grid, &out.join(format!("{prefix}{name}.txt")))?;
                }
            }
        }
    }
    Ok(0)
}

/// Generates a synthetic dataset file (deterministic in the seed).
pub fn cmd_gen(
    kind: &str,
    samples: usize,
    seed: u64,
    out: &Path,
    train_frac: f64,
    val_frac: f64,
) -> Result<i32> {
    let kind = SynthKind::parse(kind)?;
    let spec = SynthSpec {
        kind,
        n_samples: samples,
        train_frac,
        val_frac,
    };
    let data = gen_synthetic(&spec, seed)?;
    match kind {
        SynthKind::MultiOutputCorrelated => crate::formats::save_multilabel(&data, out)?,
        SynthKind::MultiViewXor | SynthKind::Bags => crate::formats::save_records(&data, out)?,
    }
    println!("wrote {} samples (density {})", data.samples.len(), data.density());
    Ok(0)
}
