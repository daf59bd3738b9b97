//! Line-delimited record datasets for multi-view and bag inputs.
//!
//! The first line is a header object; every following line is one sample:
//!
//! ```text
//! {"part_dims":[4,6],"arities":[2],"bags":false}
//! {"split":"train","parts":[[1.0,0.1,0.2,0.3],[0.0,0.4,0.5,0.6,0.7,0.8]],"targets":[1]}
//! ```
//!
//! With `"bags":true` the header carries a single per-instance dimension
//! and each sample's `parts` is its (non-empty, variable-size) instance
//! list.

use std::fs;
use std::path::Path;

use clb_core::{Dataset, DatasetMeta, FeatureVec, Sample, Split};
use serde::{Deserialize, Serialize};

use crate::error::{ClbError, Result};

#[derive(Serialize, Deserialize)]
struct Header {
    part_dims: Vec<usize>,
    arities: Vec<usize>,
    bags: bool,
}

#[derive(Serialize, Deserialize)]
struct Record {
    split: String,
    parts: Vec<Vec<f64>>,
    targets: Vec<usize>,
}

fn load_records(path: &Path, expect_bags: bool) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| ClbError::io(path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hline, header_text) = lines
        .next()
        .ok_or_else(|| ClbError::Schema(format!("{}: empty file", path.display())))?;
    let header: Header = serde_json::from_str(header_text)
        .map_err(|e| ClbError::parse(path, hline + 1, format!("bad header: {e}")))?;
    if header.bags != expect_bags {
        return Err(ClbError::Schema(format!(
            "{}: expected bags={expect_bags}, header says {}",
            path.display(),
            header.bags
        )));
    }
    if header.bags && header.part_dims.len() != 1 {
        return Err(ClbError::Schema(format!(
            "{}: bag datasets declare a single instance dimension",
            path.display()
        )));
    }

    let mut samples = Vec::new();
    let mut splits = Vec::new();
    for (ln, line) in lines {
        let lineno = ln + 1;
        let rec: Record = serde_json::from_str(line)
            .map_err(|e| ClbError::parse(path, lineno, e.to_string()))?;
        let split =
            Split::parse(&rec.split).map_err(|e| ClbError::parse(path, lineno, e.to_string()))?;
        if header.bags && rec.parts.is_empty() {
            return Err(ClbError::parse(path, lineno, "empty bag"));
        }
        samples.push(Sample {
            parts: rec.parts.into_iter().map(FeatureVec::Dense).collect(),
            targets: rec.targets,
            bag: header.bags,
        });
        splits.push(split);
    }
    if samples.is_empty() {
        return Err(ClbError::Schema(format!("{}: no samples", path.display())));
    }

    let data = Dataset {
        meta: DatasetMeta {
            part_dims: header.part_dims,
            arities: header.arities,
            bags: header.bags,
        },
        samples,
        splits,
    };
    data.validate()
        .map_err(|e| ClbError::Schema(format!("{}: {e}", path.display())))?;
    Ok(data)
}

/// Loads a fixed-part-count record file (multi-view, possibly with
/// multiple outputs).
pub fn load_multiview(path: &Path) -> Result<Dataset> {
    load_records(path, false)
}

/// Loads a variable-size instance-bag record file.
pub fn load_bags(path: &Path) -> Result<Dataset> {
    load_records(path, true)
}

/// Writes any non-multilabel dataset in the record format.
pub fn save_records(data: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    let header = Header {
        part_dims: data.meta.part_dims.clone(),
        arities: data.meta.arities.clone(),
        bags: data.meta.bags,
    };
    out.push_str(&serde_json::to_string(&header).expect("header serializes"));
    out.push('\n');
    for (sample, split) in data.samples.iter().zip(data.splits.iter()) {
        let rec = Record {
            split: split.as_str().to_string(),
            parts: sample.parts.iter().map(|p| p.to_dense()).collect(),
            targets: sample.targets.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| ClbError::io(path, e))
}

/// Loads any dataset file by sniffing its format: record files start with
/// a `{` header, everything else parses as the multi-label grammar.
pub fn load_auto(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| ClbError::io(path, e))?;
    let first = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("");
    if first.starts_with('{') {
        let header: Header = serde_json::from_str(first)
            .map_err(|e| ClbError::parse(path, 1, format!("bad header: {e}")))?;
        load_records(path, header.bags)
    } else {
        super::multilabel::load_multilabel(path)
    }
}
