//! In-memory datasets, synthetic generators, and evaluation metrics.

mod analysis;
mod metrics;
mod synth;

pub use analysis::{embedding_similarity_matrix, hidden_dynamics, label_cooccurrence_matrix};
pub use metrics::{hamming_loss, metrics_report, micro_f1, ConfusionCounts, MetricsReport};
pub use synth::{gen_synthetic, SynthKind, SynthSpec};

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Which split a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "valid",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Usage(alloc::format!("unknown split tag `{other}`"))),
        }
    }
}

/// One input part: either a dense vector or sparse `index:value` entries.
/// Sparse parts are densified where the network first projects them.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureVec {
    Dense(Vec<f64>),
    Sparse { dim: usize, entries: Vec<(usize, f64)> },
}

impl FeatureVec {
    pub fn dim(&self) -> usize {
        match self {
            FeatureVec::Dense(v) => v.len(),
            FeatureVec::Sparse { dim, .. } => *dim,
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        match self {
            FeatureVec::Dense(v) => v.clone(),
            FeatureVec::Sparse { dim, entries } => {
                let mut out = alloc::vec![0.0; *dim];
                for &(i, v) in entries {
                    out[i] = v;
                }
                out
            }
        }
    }
}

/// One example: input parts plus one class index per output target.
/// `bag` marks a variable-size instance list (all parts share one
/// dimension and one mini-column).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub parts: Vec<FeatureVec>,
    pub targets: Vec<usize>,
    pub bag: bool,
}

/// Shape metadata shared by all samples of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    /// Dimension of each input part; a single entry for bag datasets
    /// (the per-instance dimension).
    pub part_dims: Vec<usize>,
    /// Number of classes per output: 2 for binary, k for k-class.
    pub arities: Vec<usize>,
    /// Samples are variable-size instance bags.
    pub bags: bool,
}

impl DatasetMeta {
    pub fn n_inputs(&self) -> usize {
        self.part_dims.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.arities.len()
    }
}

/// A dataset with its split assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub samples: Vec<Sample>,
    pub splits: Vec<Split>,
}

impl Dataset {
    /// Checks every sample against the metadata: part counts and
    /// dimensions, target counts and ranges, split list length.
    pub fn validate(&self) -> Result<()> {
        if self.splits.len() != self.samples.len() {
            return Err(Error::Usage(alloc::format!(
                "{} split tags for {} samples",
                self.splits.len(),
                self.samples.len()
            )));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if self.meta.bags {
                if !s.bag {
                    return Err(Error::Usage(alloc::format!(
                        "sample {i}: bag dataset holds a non-bag sample"
                    )));
                }
                if s.parts.is_empty() {
                    return Err(Error::Usage(alloc::format!("sample {i}: empty bag")));
                }
                for p in &s.parts {
                    if p.dim() != self.meta.part_dims[0] {
                        return Err(Error::Usage(alloc::format!(
                            "sample {i}: instance dim {} != {}",
                            p.dim(),
                            self.meta.part_dims[0]
                        )));
                    }
                }
            } else {
                if s.parts.len() != self.meta.part_dims.len() {
                    return Err(Error::Usage(alloc::format!(
                        "sample {i}: {} parts, metadata says {}",
                        s.parts.len(),
                        self.meta.part_dims.len()
                    )));
                }
                for (p, &d) in s.parts.iter().zip(self.meta.part_dims.iter()) {
                    if p.dim() != d {
                        return Err(Error::Usage(alloc::format!(
                            "sample {i}: part dim {} != {}",
                            p.dim(),
                            d
                        )));
                    }
                }
            }
            if s.targets.len() != self.meta.arities.len() {
                return Err(Error::Usage(alloc::format!(
                    "sample {i}: {} targets, metadata says {}",
                    s.targets.len(),
                    self.meta.arities.len()
                )));
            }
            for (t, &k) in s.targets.iter().zip(self.meta.arities.iter()) {
                if *t >= k {
                    return Err(Error::Usage(alloc::format!(
                        "sample {i}: class {t} out of range for arity {k}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Fraction of positive binary label slots:
    /// (number of targets equal to 1 over binary outputs) / (n * M_L).
    pub fn density(&self) -> f64 {
        if self.samples.is_empty() || self.meta.arities.is_empty() {
            return 0.0;
        }
        let mut positives = 0usize;
        for s in &self.samples {
            for (t, &k) in s.targets.iter().zip(self.meta.arities.iter()) {
                if k == 2 && *t == 1 {
                    positives += 1;
                }
            }
        }
        positives as f64 / (self.samples.len() * self.meta.arities.len()) as f64
    }

    /// Indices of the samples in a split, in dataset order.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// A view of the dataset with a single output target (everything else
    /// intact). Used to train one-label baselines.
    pub fn project_output(&self, output: usize) -> Result<Dataset> {
        if output >= self.meta.arities.len() {
            return Err(Error::Usage(alloc::format!(
                "output {output} out of range ({})",
                self.meta.arities.len()
            )));
        }
        Ok(Dataset {
            meta: DatasetMeta {
                part_dims: self.meta.part_dims.clone(),
                arities: alloc::vec![self.meta.arities[output]],
                bags: self.meta.bags,
            },
            samples: self
                .samples
                .iter()
                .map(|s| Sample {
                    parts: s.parts.clone(),
                    targets: alloc::vec![s.targets[output]],
                    bag: s.bag,
                })
                .collect(),
            splits: self.splits.clone(),
        })
    }

    /// Hard targets of a split as rows, for metric computation.
    pub fn split_targets(&self, split: Split) -> Vec<Vec<usize>> {
        self.split_indices(split)
            .into_iter()
            .map(|i| self.samples[i].targets.clone())
            .collect()
    }
}

/// Human-readable one-line description, used by loaders for diagnostics.
pub fn describe_meta(meta: &DatasetMeta) -> String {
    alloc::format!(
        "{} input part(s) {:?}, {} output(s) {:?}, bags={}",
        meta.n_inputs(),
        meta.part_dims,
        meta.n_outputs(),
        meta.arities,
        meta.bags
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn tiny() -> Dataset {
        Dataset {
            meta: DatasetMeta {
                part_dims: vec![3],
                arities: vec![2, 2, 2],
                bags: false,
            },
            samples: vec![
                Sample {
                    parts: vec![FeatureVec::Sparse {
                        dim: 3,
                        entries: vec![(0, 1.0)],
                    }],
                    targets: vec![1, 0, 0],
                    bag: false,
                },
                Sample {
                    parts: vec![FeatureVec::Dense(vec![0.0, 1.0, 0.5])],
                    targets: vec![1, 0, 1],
                    bag: false,
                },
            ],
            splits: vec![Split::Train, Split::Train],
        }
    }

    #[test]
    fn density_matches_hand_count() {
        let d = tiny();
        d.validate().unwrap();
        // positives: {0} and {0,2} -> 3 of 2*3 slots
        assert_eq!(d.density(), 0.5);
    }

    #[test]
    fn density_agrees_with_brute_force_recount() {
        let d = tiny();
        let mut count = 0usize;
        let mut slots = 0usize;
        for s in &d.samples {
            for (o, &t) in s.targets.iter().enumerate() {
                slots += 1;
                if d.meta.arities[o] == 2 && t == 1 {
                    count += 1;
                }
            }
        }
        assert_eq!(d.density(), count as f64 / slots as f64);
    }

    #[test]
    fn sparse_densifies() {
        let f = FeatureVec::Sparse {
            dim: 4,
            entries: vec![(1, 2.0), (3, -1.0)],
        };
        assert_eq!(f.to_dense(), vec![0.0, 2.0, 0.0, -1.0]);
    }

    #[test]
    fn validate_rejects_out_of_range_class() {
        let mut d = tiny();
        d.samples[0].targets[0] = 2;
        assert!(d.validate().is_err());
    }

    #[test]
    fn project_output_keeps_parts() {
        let d = tiny();
        let p = d.project_output(2).unwrap();
        assert_eq!(p.meta.arities, vec![2]);
        assert_eq!(p.samples[1].targets, vec![1]);
        assert_eq!(p.samples[0].parts, d.samples[0].parts);
        assert!(d.project_output(3).is_err());
    }
}
