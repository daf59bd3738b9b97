//! Versioned binary checkpoint container: architecture + task
//! configuration as key/value text entries, followed by the named
//! parameter tensors in raw little-endian `f64`. Save -> load is
//! bit-exact.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use clb_core::bundle::{build_params, ParamInit};
use clb_core::tasks::TaskKind;
use clb_core::{Activation, BundleConfig, ClbModel, TaskSpec, Tensor};

use crate::error::{ClbError, Result};

const MAGIC: &[u8; 4] = b"CLB\x01";

fn write_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_str(r: &mut impl Read) -> std::io::Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(String::from_utf8_lossy(&buf).into_owned())
}

fn usize_list(values: &[usize]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_usize_list(s: &str) -> Option<Vec<usize>> {
    s.split(',').map(|t| t.parse().ok()).collect()
}

fn config_entries(model: &ClbModel) -> Vec<(String, String)> {
    let cfg = &model.config;
    let task = &model.task;
    let mut kv = vec![
        ("model".to_string(), "clb".to_string()),
        ("bundle.n_layers".to_string(), cfg.n_layers.to_string()),
        ("bundle.d_central".to_string(), cfg.d_central.to_string()),
        ("bundle.d_mini".to_string(), cfg.d_mini.to_string()),
        (
            "bundle.n_minicolumns".to_string(),
            cfg.n_minicolumns.to_string(),
        ),
        (
            "bundle.share_layers".to_string(),
            cfg.share_layers.to_string(),
        ),
        (
            "bundle.share_minicolumns".to_string(),
            cfg.share_minicolumns.to_string(),
        ),
        (
            "bundle.activation".to_string(),
            cfg.activation.as_str().to_string(),
        ),
        (
            "bundle.dropout_rate".to_string(),
            cfg.dropout_rate.to_string(),
        ),
        ("task.kind".to_string(), task.kind.as_str().to_string()),
        ("task.inputs".to_string(), usize_list(&task.inputs)),
        ("task.outputs".to_string(), usize_list(&task.outputs)),
        (
            "task.use_label_embedding".to_string(),
            task.use_label_embedding.to_string(),
        ),
        ("task.bags".to_string(), task.bags.to_string()),
    ];
    if let Some(d) = cfg.embed_dim {
        kv.push(("bundle.embed_dim".to_string(), d.to_string()));
    }
    if let Some(d) = task.projection_dim {
        kv.push(("task.projection_dim".to_string(), d.to_string()));
    }
    kv
}

fn configs_from_entries(kv: &BTreeMap<String, String>) -> Result<(BundleConfig, TaskSpec)> {
    let get = |key: &str| -> Result<&str> {
        kv.get(key)
            .map(String::as_str)
            .ok_or_else(|| ClbError::Schema(format!("checkpoint lacks `{key}`")))
    };
    let parse_num = |key: &str| -> Result<usize> {
        get(key)?
            .parse()
            .map_err(|_| ClbError::Schema(format!("bad `{key}` in checkpoint")))
    };
    let parse_bool = |key: &str| -> Result<bool> {
        get(key)?
            .parse()
            .map_err(|_| ClbError::Schema(format!("bad `{key}` in checkpoint")))
    };
    if get("model")? != "clb" {
        return Err(ClbError::Schema("unknown model kind in checkpoint".into()));
    }

    let cfg = BundleConfig {
        n_layers: parse_num("bundle.n_layers")?,
        d_central: parse_num("bundle.d_central")?,
        d_mini: parse_num("bundle.d_mini")?,
        n_minicolumns: parse_num("bundle.n_minicolumns")?,
        share_layers: parse_bool("bundle.share_layers")?,
        share_minicolumns: parse_bool("bundle.share_minicolumns")?,
        embed_dim: match kv.get("bundle.embed_dim") {
            Some(v) => Some(
                v.parse()
                    .map_err(|_| ClbError::Schema("bad `bundle.embed_dim`".into()))?,
            ),
            None => None,
        },
        activation: Activation::parse(get("bundle.activation")?)?,
        dropout_rate: get("bundle.dropout_rate")?
            .parse()
            .map_err(|_| ClbError::Schema("bad `bundle.dropout_rate`".into()))?,
    };
    let task = TaskSpec {
        kind: TaskKind::parse(get("task.kind")?)?,
        inputs: parse_usize_list(get("task.inputs")?)
            .ok_or_else(|| ClbError::Schema("bad `task.inputs`".into()))?,
        outputs: parse_usize_list(get("task.outputs")?)
            .ok_or_else(|| ClbError::Schema("bad `task.outputs`".into()))?,
        projection_dim: match kv.get("task.projection_dim") {
            Some(v) => Some(
                v.parse()
                    .map_err(|_| ClbError::Schema("bad `task.projection_dim`".into()))?,
            ),
            None => None,
        },
        use_label_embedding: parse_bool("task.use_label_embedding")?,
        bags: parse_bool("task.bags")?,
    };
    Ok((cfg, task))
}

/// Writes the model to a checkpoint file.
pub fn save_checkpoint(model: &ClbModel, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| ClbError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| ClbError::io(path, e);

    w.write_all(MAGIC).map_err(io)?;
    let entries = config_entries(model);
    write_u32(&mut w, entries.len() as u32).map_err(io)?;
    for (k, v) in &entries {
        write_str(&mut w, k).map_err(io)?;
        write_str(&mut w, v).map_err(io)?;
    }
    let tensors = model.params.tensors();
    write_u32(&mut w, tensors.len() as u32).map_err(io)?;
    for (name, t) in tensors {
        write_str(&mut w, &name).map_err(io)?;
        write_u32(&mut w, t.rows() as u32).map_err(io)?;
        write_u32(&mut w, t.cols() as u32).map_err(io)?;
        for v in t.data() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Reads a checkpoint back into a model. The tensor set must match the
/// stored configuration exactly (same names, same shapes, nothing
/// missing, nothing extra).
pub fn load_checkpoint(path: &Path) -> Result<ClbModel> {
    let file = File::open(path).map_err(|e| ClbError::io(path, e))?;
    let mut r = BufReader::new(file);
    let io = |e| ClbError::io(path, e);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(ClbError::Schema(format!(
            "{}: not a checkpoint file (bad magic)",
            path.display()
        )));
    }
    let n_kv = read_u32(&mut r).map_err(io)? as usize;
    let mut kv = BTreeMap::new();
    for _ in 0..n_kv {
        let k = read_str(&mut r).map_err(io)?;
        let v = read_str(&mut r).map_err(io)?;
        kv.insert(k, v);
    }
    let (config, task) = configs_from_entries(&kv)?;

    let mut stored: BTreeMap<String, Tensor> = BTreeMap::new();
    let n_tensors = read_u32(&mut r).map_err(io)? as usize;
    for _ in 0..n_tensors {
        let name = read_str(&mut r).map_err(io)?;
        let rows = read_u32(&mut r).map_err(io)? as usize;
        let cols = read_u32(&mut r).map_err(io)? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        let mut buf = [0u8; 8];
        for _ in 0..rows * cols {
            r.read_exact(&mut buf).map_err(io)?;
            data.push(f64::from_le_bytes(buf));
        }
        stored.insert(name, Tensor::from_vec(rows, cols, data)?);
    }

    let mut params = build_params(&config, &task, ParamInit::Zeros)?;
    let mut filled = 0usize;
    for (name, t) in params.tensors_mut() {
        let s = stored
            .get(&name)
            .ok_or_else(|| ClbError::Schema(format!("checkpoint lacks tensor `{name}`")))?;
        if s.shape() != t.shape() {
            return Err(ClbError::Schema(format!(
                "tensor `{name}`: stored {}x{}, expected {}x{}",
                s.rows(),
                s.cols(),
                t.rows(),
                t.cols()
            )));
        }
        *t = s.clone();
        filled += 1;
    }
    if filled != stored.len() {
        return Err(ClbError::Schema(format!(
            "checkpoint holds {} tensors, model uses {filled}",
            stored.len()
        )));
    }
    Ok(ClbModel {
        config,
        task,
        params,
    })
}
