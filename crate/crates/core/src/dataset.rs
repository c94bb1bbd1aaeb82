//! Samples and deterministic labelled/unlabelled/validation splitting.
//!
//! The unlabelled partition withholds masks at the type level: trainers only
//! ever see `Sample`s whose mask has been stripped, so the semi-supervised
//! contract is enforced by construction rather than convention.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::tensor::{LabelMap, Tensor};

/// An image plus optional ground-truth mask; the unit of all data flow.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `3 x H x W`, values in `[0, 1]`.
    pub image: Tensor,
    /// `H x W`, values in `{0 (background), 1 (road)}`.
    pub mask: Option<LabelMap>,
}

impl Sample {
    pub fn validate(&self) -> Result<()> {
        if self.image.shape().len() != 3 || self.image.shape()[0] != 3 {
            return Err(CoreError::Shape(format!(
                "sample {}: image must be 3 x H x W, got {:?}",
                self.id,
                self.image.shape()
            )));
        }
        if !self.image.data().iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(CoreError::Validation(format!(
                "sample {}: image values outside [0,1]",
                self.id
            )));
        }
        if let Some(mask) = &self.mask {
            let (h, w) = (self.image.shape()[1], self.image.shape()[2]);
            if mask.shape() != [h, w] {
                return Err(CoreError::Shape(format!(
                    "sample {}: mask {:?} does not match image {h}x{w}",
                    self.id,
                    mask.shape()
                )));
            }
            if !mask.data().iter().all(|&v| v <= 1) {
                return Err(CoreError::Validation(format!(
                    "sample {}: mask contains values other than 0/1",
                    self.id
                )));
            }
        }
        Ok(())
    }

    pub fn hw(&self) -> (usize, usize) {
        (self.image.shape()[1], self.image.shape()[2])
    }
}

/// Id lists of the three partitions plus the seed that produced them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub labelled: Vec<String>,
    pub unlabelled: Vec<String>,
    pub validation: Vec<String>,
    pub seed: u64,
}

impl DatasetSplit {
    /// Checks pairwise disjointness of the id lists.
    pub fn validate(&self) -> Result<()> {
        for (a, b, what) in [
            (&self.labelled, &self.unlabelled, "labelled/unlabelled"),
            (&self.labelled, &self.validation, "labelled/validation"),
            (&self.unlabelled, &self.validation, "unlabelled/validation"),
        ] {
            for id in a {
                if b.contains(id) {
                    return Err(CoreError::Validation(format!(
                        "split partitions {what} share id {id}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Deterministic shuffle-then-partition over the mask-bearing samples.
///
/// Requires `n_labelled * (1 + unlabelled_ratio) + n_val` samples with
/// masks; the unlabelled partition's masks are withheld downstream, not
/// absent from disk.
pub fn split_dataset(
    samples: &[Sample],
    n_labelled: usize,
    unlabelled_ratio: usize,
    n_val: usize,
    seed: u64,
) -> Result<DatasetSplit> {
    let n_unlabelled = n_labelled * unlabelled_ratio;
    let required = n_labelled + n_unlabelled + n_val;
    let mut masked: Vec<&Sample> = samples.iter().filter(|s| s.mask.is_some()).collect();
    if masked.len() < required {
        return Err(CoreError::Config(format!(
            "split needs {required} samples with masks ({n_labelled} labelled + \
             {n_unlabelled} unlabelled + {n_val} validation), only {} available",
            masked.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    masked.shuffle(&mut rng);
    let ids = |range: core::ops::Range<usize>| -> Vec<String> {
        masked[range].iter().map(|s| s.id.clone()).collect()
    };
    let split = DatasetSplit {
        labelled: ids(0..n_labelled),
        unlabelled: ids(n_labelled..n_labelled + n_unlabelled),
        validation: ids(n_labelled + n_unlabelled..required),
        seed,
    };
    split.validate()?;
    Ok(split)
}

/// Materialized partitions; unlabelled samples have their masks stripped.
#[derive(Clone, Debug)]
pub struct Partitions {
    pub labelled: Vec<Sample>,
    pub unlabelled: Vec<Sample>,
    pub validation: Vec<Sample>,
}

/// Resolves a split against its sample pool. Every id must resolve, and the
/// labelled and validation samples must carry masks.
pub fn partition(samples: &[Sample], split: &DatasetSplit) -> Result<Partitions> {
    let find = |id: &String| -> Result<&Sample> {
        samples
            .iter()
            .find(|s| &s.id == id)
            .ok_or_else(|| CoreError::Validation(format!("split references unknown sample {id}")))
    };
    let with_mask = |id: &String| -> Result<Sample> {
        let s = find(id)?;
        if s.mask.is_none() {
            return Err(CoreError::Validation(format!(
                "sample {id} is in a mask-requiring partition but has no mask"
            )));
        }
        Ok(s.clone())
    };
    let labelled: Vec<Sample> = split
        .labelled
        .iter()
        .map(&with_mask)
        .collect::<Result<_>>()?;
    let validation: Vec<Sample> = split
        .validation
        .iter()
        .map(&with_mask)
        .collect::<Result<_>>()?;
    let unlabelled: Vec<Sample> = split
        .unlabelled
        .iter()
        .map(|id| {
            find(id).map(|s| Sample {
                id: s.id.clone(),
                image: s.image.clone(),
                mask: None,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Partitions {
        labelled,
        unlabelled,
        validation,
    })
}
