//! Embedding-similarity / label-co-occurrence matrices and hidden-state
//! grids for external plotting.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::bundle::ForwardTrace;
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor};

/// Rescales a square matrix affinely into [0, 1]. The diagonal is 1 before
/// rescaling (self-similarity / self-correlation), so it maps to exactly 1.
/// A matrix that is constant to within 1e-9 maps to all ones; without the
/// guard, rounding dust in an all-equal matrix would be stretched across
/// the full range.
fn min_max_rescale(m: &mut [Vec<f64>]) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for row in m.iter() {
        for &v in row {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let span = hi - lo;
    for row in m.iter_mut() {
        for v in row.iter_mut() {
            *v = if span > 1e-9 { (*v - lo) / span } else { 1.0 };
        }
    }
}

/// Pairwise cosine similarity of the embedding columns, min-max rescaled
/// into [0, 1] with diagonal 1. Columns with zero norm cannot be compared:
/// their off-diagonal similarity is defined as 0 (before rescaling) and
/// their indices are returned as flagged.
pub fn embedding_similarity_matrix(embed: &Tensor) -> (Vec<Vec<f64>>, Vec<usize>) {
    let m_l = embed.cols();
    let d = embed.rows();
    let col = |i: usize| -> Vec<f64> { (0..d).map(|r| embed.get(r, i)).collect() };
    let norms: Vec<f64> = (0..m_l)
        .map(|i| libm::sqrt(col(i).iter().map(|v| v * v).sum()))
        .collect();
    let flagged: Vec<usize> = (0..m_l).filter(|&i| norms[i] == 0.0).collect();

    let mut sim = vec![vec![0.0; m_l]; m_l];
    for i in 0..m_l {
        sim[i][i] = 1.0;
        for j in (i + 1)..m_l {
            let value = if norms[i] == 0.0 || norms[j] == 0.0 {
                0.0
            } else {
                let dot: f64 = col(i).iter().zip(col(j).iter()).map(|(a, b)| a * b).sum();
                dot / (norms[i] * norms[j])
            };
            sim[i][j] = value;
            sim[j][i] = value;
        }
    }
    min_max_rescale(&mut sim);
    (sim, flagged)
}

/// Pairwise Pearson correlation of the binary label indicators over all
/// samples, min-max rescaled into [0, 1] with diagonal 1. Constant labels
/// (zero variance) get off-diagonal correlation 0.
pub fn label_cooccurrence_matrix(
    targets: &[Vec<usize>],
    n_outputs: usize,
) -> Result<Vec<Vec<f64>>> {
    if targets.is_empty() {
        return Err(Error::Usage("co-occurrence needs at least one sample".into()));
    }
    let n = targets.len() as f64;
    let indicator = |s: &Vec<usize>, o: usize| -> f64 {
        if s[o] == 1 {
            1.0
        } else {
            0.0
        }
    };
    let means: Vec<f64> = (0..n_outputs)
        .map(|o| targets.iter().map(|s| indicator(s, o)).sum::<f64>() / n)
        .collect();
    let stds: Vec<f64> = (0..n_outputs)
        .map(|o| {
            let var = targets
                .iter()
                .map(|s| {
                    let d = indicator(s, o) - means[o];
                    d * d
                })
                .sum::<f64>()
                / n;
            libm::sqrt(var)
        })
        .collect();

    let mut corr = vec![vec![0.0; n_outputs]; n_outputs];
    for i in 0..n_outputs {
        corr[i][i] = 1.0;
        for j in (i + 1)..n_outputs {
            let value = if stds[i] == 0.0 || stds[j] == 0.0 {
                0.0
            } else {
                let cov = targets
                    .iter()
                    .map(|s| (indicator(s, i) - means[i]) * (indicator(s, j) - means[j]))
                    .sum::<f64>()
                    / n;
                cov / (stds[i] * stds[j])
            };
            corr[i][j] = value;
            corr[j][i] = value;
        }
    }
    min_max_rescale(&mut corr);
    Ok(corr)
}

/// Layer-by-layer hidden states of every column as `(name, T x d grid)`
/// pairs: row t holds the layer-(t+1) state.
pub fn hidden_dynamics(tape: &Tape, trace: &ForwardTrace) -> Vec<(String, Vec<Vec<f64>>)> {
    let grid_of = |ids: &[crate::numerics::NodeId]| -> Vec<Vec<f64>> {
        ids.iter().map(|&id| tape.value(id).data().to_vec()).collect()
    };
    let mut out = Vec::with_capacity(1 + trace.h_mini.len());
    out.push((String::from("central"), grid_of(&trace.h_c)));
    for (i, col) in trace.h_mini.iter().enumerate() {
        out.push((alloc::format!("mini{i}"), grid_of(col)));
    }
    out
}
