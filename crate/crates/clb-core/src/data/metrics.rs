//! Micro-averaged F1 and Hamming loss over hard predictions.
//!
//! Counts are pooled across all samples and all output slots. Binary
//! outputs contribute the usual TP/FP/FN/TN on class 1; a k-class output
//! contributes one TP when correct and one FP plus one FN (for the
//! predicted and true classes) when wrong, which makes micro-F1 collapse
//! to accuracy for a single multi-class output.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Pooled confusion counts for one output slot.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

/// Evaluation summary for one prediction/target matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub micro_f1: f64,
    pub hamming_loss: f64,
    pub per_label: Vec<ConfusionCounts>,
}

fn check_shapes(preds: &[Vec<usize>], targets: &[Vec<usize>], arities: &[usize]) -> Result<()> {
    if preds.len() != targets.len() {
        return Err(Error::Usage(alloc::format!(
            "{} predictions vs {} targets",
            preds.len(),
            targets.len()
        )));
    }
    for (i, (p, t)) in preds.iter().zip(targets.iter()).enumerate() {
        if p.len() != arities.len() || t.len() != arities.len() {
            return Err(Error::Usage(alloc::format!(
                "row {i}: expected {} outputs, got {} predicted / {} true",
                arities.len(),
                p.len(),
                t.len()
            )));
        }
    }
    Ok(())
}

fn pool_counts(
    preds: &[Vec<usize>],
    targets: &[Vec<usize>],
    arities: &[usize],
) -> Vec<ConfusionCounts> {
    let mut counts = alloc::vec![ConfusionCounts::default(); arities.len()];
    for (p_row, t_row) in preds.iter().zip(targets.iter()) {
        for (o, (&p, &t)) in p_row.iter().zip(t_row.iter()).enumerate() {
            let c = &mut counts[o];
            if arities[o] == 2 {
                match (p == 1, t == 1) {
                    (true, true) => c.tp += 1,
                    (true, false) => c.fp += 1,
                    (false, true) => c.fn_ += 1,
                    (false, false) => c.tn += 1,
                }
            } else if p == t {
                c.tp += 1;
            } else {
                c.fp += 1;
                c.fn_ += 1;
            }
        }
    }
    counts
}

/// Micro-averaged F1: `2*TP / (2*TP + FP + FN)` with counts pooled over
/// every sample and output. Defined as 1.0 when neither side has any
/// positives.
pub fn micro_f1(preds: &[Vec<usize>], targets: &[Vec<usize>], arities: &[usize]) -> Result<f64> {
    check_shapes(preds, targets, arities)?;
    let counts = pool_counts(preds, targets, arities);
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for c in &counts {
        tp += c.tp;
        fp += c.fp;
        fn_ += c.fn_;
    }
    if 2 * tp + fp + fn_ == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64)
}

/// Fraction of output slots whose hard prediction differs from the target.
pub fn hamming_loss(
    preds: &[Vec<usize>],
    targets: &[Vec<usize>],
    arities: &[usize],
) -> Result<f64> {
    check_shapes(preds, targets, arities)?;
    let mut wrong = 0usize;
    let mut total = 0usize;
    for (p_row, t_row) in preds.iter().zip(targets.iter()) {
        for (&p, &t) in p_row.iter().zip(t_row.iter()) {
            total += 1;
            if p != t {
                wrong += 1;
            }
        }
    }
    if total == 0 {
        return Ok(0.0);
    }
    Ok(wrong as f64 / total as f64)
}

/// Both metrics plus the per-output confusion counts.
pub fn metrics_report(
    preds: &[Vec<usize>],
    targets: &[Vec<usize>],
    arities: &[usize],
) -> Result<MetricsReport> {
    Ok(MetricsReport {
        micro_f1: micro_f1(preds, targets, arities)?,
        hamming_loss: hamming_loss(preds, targets, arities)?,
        per_label: pool_counts(preds, targets, arities),
    })
}
