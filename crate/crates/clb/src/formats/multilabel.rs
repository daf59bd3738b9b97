//! Sparse multi-label dataset files.
//!
//! Line-oriented text, one sample per line:
//!
//! ```text
//! # features=10 labels=3          optional metadata header
//! train 0,2 1:0.5 7:-1.25        split, positive labels, index:value pairs
//! test - 0:1.0                   '-' marks an empty label set
//! ```
//!
//! Indices are 0-based. Every listed label is positive (class 1); all
//! others are 0. Feature and label counts are taken from the header when
//! present, otherwise inferred as max index + 1 over the whole file.

use std::fs;
use std::path::Path;

use clb_core::{Dataset, DatasetMeta, FeatureVec, Sample, Split};

use crate::error::{ClbError, Result};

/// Loads a sparse multi-label file (single input part, binary outputs).
pub fn load_multilabel(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| ClbError::io(path, e))?;
    let mut declared_features: Option<usize> = None;
    let mut declared_labels: Option<usize> = None;
    let mut rows: Vec<(usize, Split, Vec<usize>, Vec<(usize, f64)>)> = Vec::new();
    let mut max_feature = 0usize;
    let mut max_label = 0usize;
    let mut any_feature = false;
    let mut any_label = false;

    for (ln, raw) in text.lines().enumerate() {
        let lineno = ln + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            for token in comment.split_whitespace() {
                if let Some(v) = token.strip_prefix("features=") {
                    declared_features = Some(v.parse().map_err(|_| {
                        ClbError::parse(path, lineno, format!("bad feature count `{v}`"))
                    })?);
                } else if let Some(v) = token.strip_prefix("labels=") {
                    declared_labels = Some(v.parse().map_err(|_| {
                        ClbError::parse(path, lineno, format!("bad label count `{v}`"))
                    })?);
                }
            }
            continue;
        }

        let mut tokens = line.split_whitespace();
        let split_tag = tokens.next().expect("nonempty line");
        let split = Split::parse(split_tag)
            .map_err(|e| ClbError::parse(path, lineno, e.to_string()))?;
        let label_tok = tokens
            .next()
            .ok_or_else(|| ClbError::parse(path, lineno, "missing label field"))?;
        let mut labels = Vec::new();
        if label_tok != "-" {
            for l in label_tok.split(',') {
                let idx: usize = l.parse().map_err(|_| {
                    ClbError::parse(path, lineno, format!("bad label index `{l}`"))
                })?;
                max_label = max_label.max(idx);
                any_label = true;
                labels.push(idx);
            }
        }
        let mut entries = Vec::new();
        for tok in tokens {
            let (i, v) = tok
                .split_once(':')
                .ok_or_else(|| ClbError::parse(path, lineno, format!("bad feature `{tok}`")))?;
            let idx: usize = i
                .parse()
                .map_err(|_| ClbError::parse(path, lineno, format!("bad feature index `{i}`")))?;
            let val: f64 = v
                .parse()
                .map_err(|_| ClbError::parse(path, lineno, format!("bad feature value `{v}`")))?;
            max_feature = max_feature.max(idx);
            any_feature = true;
            entries.push((idx, val));
        }
        rows.push((lineno, split, labels, entries));
    }

    if rows.is_empty() {
        return Err(ClbError::Schema(format!(
            "{}: no samples",
            path.display()
        )));
    }
    let n_features = declared_features.unwrap_or(if any_feature { max_feature + 1 } else { 0 });
    let n_labels = declared_labels.unwrap_or(if any_label { max_label + 1 } else { 0 });
    if n_features == 0 || n_labels == 0 {
        return Err(ClbError::Schema(format!(
            "{}: cannot infer feature/label counts (add a `# features=F labels=L` header)",
            path.display()
        )));
    }

    let mut samples = Vec::with_capacity(rows.len());
    let mut splits = Vec::with_capacity(rows.len());
    for (lineno, split, labels, entries) in rows {
        for &(idx, _) in &entries {
            if idx >= n_features {
                return Err(ClbError::parse(
                    path,
                    lineno,
                    format!("feature index {idx} outside declared {n_features}"),
                ));
            }
        }
        let mut targets = vec![0usize; n_labels];
        for l in labels {
            if l >= n_labels {
                return Err(ClbError::parse(
                    path,
                    lineno,
                    format!("label index {l} outside declared {n_labels}"),
                ));
            }
            targets[l] = 1;
        }
        samples.push(Sample {
            parts: vec![FeatureVec::Sparse {
                dim: n_features,
                entries,
            }],
            targets,
            bag: false,
        });
        splits.push(split);
    }

    let data = Dataset {
        meta: DatasetMeta {
            part_dims: vec![n_features],
            arities: vec![2; n_labels],
            bags: false,
        },
        samples,
        splits,
    };
    data.validate()
        .map_err(|e| ClbError::Schema(format!("{}: {e}", path.display())))?;
    Ok(data)
}

/// Writes a dataset in the multi-label format. The dataset must be a
/// single sparse-or-dense part with all-binary outputs.
pub fn save_multilabel(data: &Dataset, path: &Path) -> Result<()> {
    if data.meta.n_inputs() != 1 || data.meta.bags {
        return Err(ClbError::Schema(
            "the multi-label format holds exactly one input part".into(),
        ));
    }
    if data.meta.arities.iter().any(|&k| k != 2) {
        return Err(ClbError::Schema(
            "the multi-label format holds binary outputs only".into(),
        ));
    }
    let mut out = String::new();
    out.push_str(&format!(
        "# features={} labels={}\n",
        data.meta.part_dims[0],
        data.meta.n_outputs()
    ));
    for (sample, split) in data.samples.iter().zip(data.splits.iter()) {
        out.push_str(split.as_str());
        out.push(' ');
        let positives: Vec<String> = sample
            .targets
            .iter()
            .enumerate()
            .filter(|(_, &t)| t == 1)
            .map(|(i, _)| i.to_string())
            .collect();
        if positives.is_empty() {
            out.push('-');
        } else {
            out.push_str(&positives.join(","));
        }
        match &sample.parts[0] {
            FeatureVec::Sparse { entries, .. } => {
                for (i, v) in entries {
                    out.push_str(&format!(" {i}:{v}"));
                }
            }
            FeatureVec::Dense(values) => {
                for (i, v) in values.iter().enumerate() {
                    if *v != 0.0 {
                        out.push_str(&format!(" {i}:{v}"));
                    }
                }
            }
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| ClbError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn two_line_file_infers_metadata_and_density() {
        let f = write_tmp("train 0 0:1.0 2:0.5\ntest 0,2 1:-2.0\n");
        let data = load_multilabel(f.path()).unwrap();
        assert_eq!(data.meta.n_outputs(), 3);
        assert_eq!(data.meta.part_dims, vec![3]);
        assert_eq!(data.density(), 0.5);
        assert_eq!(data.samples[1].targets, vec![1, 0, 1]);
    }

    #[test]
    fn header_pins_shapes() {
        // MediaMill-shaped metadata: 120 features, 101 labels.
        let f = write_tmp("# features=120 labels=101\ntrain 0,100 0:1.0 119:0.25\ntest - 5:1\n");
        let data = load_multilabel(f.path()).unwrap();
        assert_eq!(data.meta.part_dims, vec![120]);
        assert_eq!(data.meta.n_outputs(), 101);
        data.validate().unwrap();
    }

    #[test]
    fn malformed_lines_name_their_line_number() {
        let f = write_tmp("train 0 0:1.0\ntrain 1 nonsense\n");
        let err = load_multilabel(f.path()).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");

        let f = write_tmp("train 0 0:1.0\nval 1 0:1.0\n");
        let err = load_multilabel(f.path()).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn out_of_range_indices_are_schema_errors() {
        let f = write_tmp("# features=2 labels=2\ntrain 0 5:1.0\n");
        assert!(load_multilabel(f.path()).is_err());
        let f = write_tmp("# features=2 labels=2\ntrain 7 0:1.0\n");
        assert!(load_multilabel(f.path()).is_err());
    }

    #[test]
    fn save_load_is_lossless() {
        let f = write_tmp("train 0 0:0.1234567890123456 2:-0.5\nvalid 0,2 1:3.0\ntest - 0:1\n");
        let data = load_multilabel(f.path()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        save_multilabel(&data, out.path()).unwrap();
        let reloaded = load_multilabel(out.path()).unwrap();
        assert_eq!(data, reloaded);
    }
}
