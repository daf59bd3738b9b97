//! Desk-scale synthetic datasets with planted structure.
//!
//! Three generators, one per wiring:
//!
//! - **correlated multi-output** — three binary labels over a 10-feature
//!   vector. Labels 0 and 1 share an XOR latent (invisible to a linear
//!   model) and co-occur with probability 0.9; label 2 follows an
//!   independent linear sign rule. All labels are deterministic functions
//!   of the features.
//! - **multi-view XOR** — two views of different widths, each carrying one
//!   bit among noise; the single binary target is the XOR of the two bits,
//!   so no single view predicts it.
//! - **instance bags** — variable-size bags (1..=5) of 5-dim instances;
//!   the bag label is the OR of per-instance triggers
//!   (`instance[0] > 0.75`).

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, DatasetMeta, FeatureVec, Sample, Split};
use crate::error::{Error, Result};

/// Which planted structure to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    MultiOutputCorrelated,
    MultiViewXor,
    Bags,
}

impl SynthKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SynthKind::MultiOutputCorrelated => "multi_output",
            SynthKind::MultiViewXor => "multiview_xor",
            SynthKind::Bags => "bags",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "multi_output" => Ok(SynthKind::MultiOutputCorrelated),
            "multiview_xor" => Ok(SynthKind::MultiViewXor),
            "bags" => Ok(SynthKind::Bags),
            other => Err(Error::Usage(alloc::format!(
                "unknown generator kind `{other}`"
            ))),
        }
    }
}

/// Size and split layout of a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub n_samples: usize,
    pub train_frac: f64,
    pub val_frac: f64,
}

impl SynthSpec {
    pub fn new(kind: SynthKind, n_samples: usize) -> Self {
        SynthSpec {
            kind,
            n_samples,
            train_frac: 0.6,
            val_frac: 0.2,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_samples < 3 {
            return Err(Error::Usage("need at least 3 samples for 3 splits".into()));
        }
        if !(self.train_frac > 0.0 && self.val_frac > 0.0) {
            return Err(Error::Usage("split fractions must be positive".into()));
        }
        if self.train_frac + self.val_frac >= 1.0 {
            return Err(Error::Usage(
                "train_frac + val_frac must leave room for a test split".into(),
            ));
        }
        Ok(())
    }
}

/// Contiguous split assignment: the first `train_frac`, the next
/// `val_frac`, and the remainder (samples are i.i.d., so contiguous is as
/// good as random and byte-stable).
fn splits_for(spec: &SynthSpec) -> Vec<Split> {
    let n = spec.n_samples;
    let n_train = ((n as f64 * spec.train_frac) as usize).max(1);
    let n_val = ((n as f64 * spec.val_frac) as usize).max(1);
    (0..n)
        .map(|i| {
            if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Validation
            } else {
                Split::Test
            }
        })
        .collect()
}

fn bit(rng: &mut ChaCha8Rng) -> usize {
    rng.gen_range(0..2usize)
}

/// Bits enter feature vectors as -1/+1; the symmetric encoding keeps XOR
/// learnable by small networks (it reduces to a sign of a product).
fn bit_feature(b: usize) -> f64 {
    if b == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Distractor features, kept below the signal amplitude.
fn noise(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(-0.5..0.5)
}

/// Signed magnitude clear of zero so the sign rules are robustly learnable.
fn signed(rng: &mut ChaCha8Rng, positive: bool) -> f64 {
    let magnitude = rng.gen_range(0.25..1.0);
    if positive {
        magnitude
    } else {
        -magnitude
    }
}

fn gen_multi_output(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Dataset {
    let mut samples = Vec::with_capacity(spec.n_samples);
    for _ in 0..spec.n_samples {
        // Shared latent z = a XOR b drives the correlated pair: label 0 is
        // z itself, label 1 is z flipped by a (rarely set) flip bit, so
        // labels 0 and 1 co-occur with probability 0.9 while staying
        // deterministic functions of the features. Learning label 1 alone
        // means solving a three-way parity; sharing the latent with label
        // 0 reduces it to a two-way one.
        let a = bit(rng);
        let b = bit(rng);
        let z = a ^ b;
        let flip = usize::from(rng.gen::<f64>() < 0.1);
        let l0 = z;
        let l1 = z ^ flip;
        let l2 = bit(rng);
        let features = vec![
            bit_feature(a),
            bit_feature(b),
            bit_feature(flip),
            signed(rng, l2 == 1),
            noise(rng),
            noise(rng),
            noise(rng),
            noise(rng),
            noise(rng),
            noise(rng),
        ];
        samples.push(Sample {
            parts: vec![FeatureVec::Dense(features)],
            targets: vec![l0, l1, l2],
            bag: false,
        });
    }
    Dataset {
        meta: DatasetMeta {
            part_dims: vec![10],
            arities: vec![2, 2, 2],
            bags: false,
        },
        samples,
        splits: splits_for(spec),
    }
}

fn gen_multiview_xor(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Dataset {
    let mut samples = Vec::with_capacity(spec.n_samples);
    for _ in 0..spec.n_samples {
        let b0 = bit(rng);
        let b1 = bit(rng);
        let view0 = vec![bit_feature(b0), noise(rng), noise(rng), noise(rng)];
        let view1 = vec![
            bit_feature(b1),
            noise(rng),
            noise(rng),
            noise(rng),
            noise(rng),
            noise(rng),
        ];
        samples.push(Sample {
            parts: vec![FeatureVec::Dense(view0), FeatureVec::Dense(view1)],
            targets: vec![b0 ^ b1],
            bag: false,
        });
    }
    Dataset {
        meta: DatasetMeta {
            part_dims: vec![4, 6],
            arities: vec![2],
            bags: false,
        },
        samples,
        splits: splits_for(spec),
    }
}

/// An instance fires when its first feature exceeds 0.75.
pub fn bag_instance_triggers(instance: &[f64]) -> bool {
    instance[0] > 0.75
}

fn gen_bags(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Dataset {
    let mut samples = Vec::with_capacity(spec.n_samples);
    for _ in 0..spec.n_samples {
        let size = rng.gen_range(1..=5usize);
        let mut instances = Vec::with_capacity(size);
        let mut label = 0usize;
        for _ in 0..size {
            let inst = vec![
                rng.gen_range(0.0..1.0),
                noise(rng),
                noise(rng),
                noise(rng),
                noise(rng),
            ];
            if bag_instance_triggers(&inst) {
                label = 1;
            }
            instances.push(FeatureVec::Dense(inst));
        }
        samples.push(Sample {
            parts: instances,
            targets: vec![label],
            bag: true,
        });
    }
    Dataset {
        meta: DatasetMeta {
            part_dims: vec![5],
            arities: vec![2],
            bags: true,
        },
        samples,
        splits: splits_for(spec),
    }
}

/// Generates a dataset with planted structure, deterministic in the seed.
pub fn gen_synthetic(spec: &SynthSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = match spec.kind {
        SynthKind::MultiOutputCorrelated => gen_multi_output(spec, &mut rng),
        SynthKind::MultiViewXor => gen_multiview_xor(spec, &mut rng),
        SynthKind::Bags => gen_bags(spec, &mut rng),
    };
    data.validate()?;
    Ok(data)
}
