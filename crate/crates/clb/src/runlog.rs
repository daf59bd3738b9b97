//! Run logs and metrics files.
//!
//! Run log: line-oriented text, one epoch per line, fields in this exact
//! order, space-separated:
//!
//! ```text
//! # epoch train_loss val_loss lr halvings
//! 1 0.6931471805599453 0.6905681 0.001 0
//! ```
//!
//! Floats are printed shortest-round-trip, so a parsed log reproduces the
//! recorded values exactly (the schedule can be replayed from it).
//!
//! Metrics file: `key=value` lines (`micro_f1`, `hamming_loss`, plus
//! `*_mean`/`*_std` for aggregates).

use std::fs;
use std::path::Path;

use clb_core::training::TrainReport;
use clb_core::{EpochRecord, MetricsReport};

use crate::error::{ClbError, Result};

pub fn format_runlog(report: &TrainReport) -> String {
    let mut out = String::from("# epoch train_loss val_loss lr halvings\n");
    for e in &report.epochs {
        out.push_str(&format!(
            "{} {} {} {} {}\n",
            e.epoch, e.train_loss, e.val_loss, e.lr, e.halvings
        ));
    }
    out
}

pub fn write_runlog(report: &TrainReport, path: &Path) -> Result<()> {
    fs::write(path, format_runlog(report)).map_err(|e| ClbError::io(path, e))
}

pub fn read_runlog(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = fs::read_to_string(path).map_err(|e| ClbError::io(path, e))?;
    let mut records = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(ClbError::parse(
                path,
                ln + 1,
                format!("expected 5 fields, got {}", fields.len()),
            ));
        }
        let bad = |what: &str| ClbError::parse(path, ln + 1, format!("bad {what}"));
        records.push(EpochRecord {
            epoch: fields[0].parse().map_err(|_| bad("epoch"))?,
            train_loss: fields[1].parse().map_err(|_| bad("train_loss"))?,
            val_loss: fields[2].parse().map_err(|_| bad("val_loss"))?,
            lr: fields[3].parse().map_err(|_| bad("lr"))?,
            halvings: fields[4].parse().map_err(|_| bad("halvings"))?,
        });
    }
    Ok(records)
}

pub fn format_metrics(metrics: &MetricsReport) -> String {
    format!(
        "micro_f1={}\nhamming_loss={}\n",
        metrics.micro_f1, metrics.hamming_loss
    )
}

pub fn write_metrics(metrics: &MetricsReport, path: &Path) -> Result<()> {
    fs::write(path, format_metrics(metrics)).map_err(|e| ClbError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn runlog_roundtrip_is_exact() {
        let report = TrainReport {
            epochs: vec![
                EpochRecord {
                    epoch: 1,
                    train_loss: 0.6931471805599453,
                    val_loss: 0.1234567890123456,
                    lr: 0.001,
                    halvings: 0,
                },
                EpochRecord {
                    epoch: 2,
                    train_loss: 1.0 / 3.0,
                    val_loss: f64::MIN_POSITIVE,
                    lr: 0.0005,
                    halvings: 1,
                },
            ],
            best_epoch: 2,
            best_val_loss: 0.1,
            halvings: 1,
            diverged: None,
            clamp_events: 0,
        };
        let f = tempfile::NamedTempFile::new().unwrap();
        write_runlog(&report, f.path()).unwrap();
        let parsed = read_runlog(f.path()).unwrap();
        assert_eq!(parsed, report.epochs);
        assert_eq!(parsed[1].val_loss.to_bits(), f64::MIN_POSITIVE.to_bits());
    }
}
