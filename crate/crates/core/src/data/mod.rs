//! Datasets, deterministic train/validation/test splitting and batching.

mod cifar;
mod container;
mod idx;
mod synthetic;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{RngStream, Tensor};

pub use cifar::{decode_cifar10_record, encode_cifar10_record, load_cifar10_binary, CIFAR10_RECORD_LEN};
pub use container::{read_container, write_container, CONTAINER_MAGIC, CONTAINER_VERSION};
pub use idx::{encode_idx_images, encode_idx_labels, load_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use synthetic::synthetic_blobs;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
    provenance: String,
}

/// Inputs and labels of one mini-batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, num_classes: usize, provenance: impl Into<String>) -> Result<Self> {
        if inputs.shape().len() < 2 {
            return Err(Error::invalid("dataset inputs need a leading sample axis"));
        }
        if inputs.rows() != labels.len() {
            return Err(Error::invalid(format!(
                "{} input rows vs {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::invalid(format!("label {l} >= num_classes {num_classes}")));
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// Per-sample shape (everything after the sample axis).
    pub fn input_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    /// Reinterprets each sample with a new shape of equal size.
    pub fn with_input_shape(self, shape: &[usize]) -> Result<Self> {
        let mut full = vec![self.len()];
        full.extend_from_slice(shape);
        Ok(Self {
            inputs: self.inputs.reshape(full)?,
            ..self
        })
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn gather(&self, indices: &[usize]) -> Batch {
        let w = self.inputs.row_len();
        let mut data = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            data.extend_from_slice(self.inputs.row(i));
        }
        let mut shape = self.inputs.shape().to_vec();
        shape[0] = indices.len();
        Batch {
            inputs: Tensor::from_parts(shape, data),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn subset(&self, indices: &[usize], provenance: impl Into<String>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::invalid("empty subset"));
        }
        let b = self.gather(indices);
        Self::new(b.inputs, b.labels, self.num_classes, provenance)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SplitSizes {
    Counts {
        train: usize,
        validation: usize,
        test: usize,
    },
    Fractions {
        train: f64,
        validation: f64,
        test: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub sizes: SplitSizes,
    pub seed: u64,
}

impl SplitSpec {
    /// Resolves to exact `(train, validation, test)` counts summing to `n`.
    pub fn counts(&self, n: usize) -> Result<(usize, usize, usize)> {
        let (a, b, c) = match self.sizes {
            SplitSizes::Counts {
                train,
                validation,
                test,
            } => {
                if train + validation + test != n {
                    return Err(Error::invalid(format!(
                        "split counts {train}+{validation}+{test} do not cover {n} samples"
                    )));
                }
                (train, validation, test)
            }
            SplitSizes::Fractions {
                train,
                validation,
                test,
            } => {
                let fs = [train, validation, test];
                if fs.iter().any(|f| !(0.0..=1.0).contains(f)) || ((train + validation + test) - 1.0).abs() > 1e-9 {
                    return Err(Error::invalid(format!(
                        "split fractions must be in [0, 1] and sum to 1, got {fs:?}"
                    )));
                }
                let a = (train * n as f64).round() as usize;
                let b = ((validation * n as f64).round() as usize).min(n - a.min(n));
                let a = a.min(n);
                (a, b, n - a - b)
            }
        };
        if a == 0 || b == 0 || c == 0 {
            return Err(Error::invalid(format!(
                "split ({a}, {b}, {c}) leaves an empty partition"
            )));
        }
        Ok((a, b, c))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

impl Splits {
    pub fn class_counts(&self) -> [Vec<usize>; 3] {
        [
            self.train.class_counts(),
            self.validation.class_counts(),
            self.test.class_counts(),
        ]
    }
}

/// Shuffled index partition `(train, validation, test)` of `0..n`.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<[Vec<usize>; 3]> {
    let (a, b, _) = spec.counts(n)?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut RngStream::new(spec.seed).split("split"));
    let test = idx.split_off(a + b);
    let validation = idx.split_off(a);
    Ok([idx, validation, test])
}

pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<Splits> {
    let [tr, va, te] = split_indices(ds.len(), spec)?;
    let p = ds.provenance();
    Ok(Splits {
        train: ds.subset(&tr, format!("{p}[train]"))?,
        validation: ds.subset(&va, format!("{p}[validation]"))?,
        test: ds.subset(&te, format!("{p}[test]"))?,
    })
}

/// Disjoint random `(train, validation)` subsets of the given sizes, for
/// sources that ship a separate test set. Unused samples are dropped.
pub fn holdout(ds: &Dataset, train: usize, validation: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = ds.len();
    if train == 0 || validation == 0 || train + validation > n {
        return Err(Error::invalid(format!(
            "holdout ({train}, {validation}) is infeasible for {n} samples"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut RngStream::new(seed).split("split"));
    let p = ds.provenance();
    Ok((
        ds.subset(&idx[..train], format!("{p}[train]"))?,
        ds.subset(&idx[train..train + validation], format!("{p}[validation]"))?,
    ))
}

/// One shuffled pass over the dataset.
pub struct Batches<'a> {
    ds: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
    drop_last: bool,
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let remaining = self.order.len() - self.pos;
        if remaining == 0 || (self.drop_last && remaining < self.batch_size) {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let b = self.ds.gather(&self.order[self.pos..end]);
        self.pos = end;
        Some(b)
    }
}

pub fn batches<'a>(ds: &'a Dataset, batch_size: usize, rng: &mut RngStream, drop_last: bool) -> Result<Batches<'a>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be >= 1"));
    }
    if drop_last && batch_size > ds.len() {
        return Err(Error::invalid(format!(
            "batch_size {batch_size} > {} samples with drop_last: empty epoch",
            ds.len()
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(rng);
    Ok(Batches {
        ds,
        order,
        batch_size,
        pos: 0,
        drop_last,
    })
}

/// Uniform sample without replacement of `min(size, n)` items.
pub fn sample_batch(ds: &Dataset, size: usize, rng: &mut RngStream) -> Result<Batch> {
    if size == 0 {
        return Err(Error::invalid("batch size must be >= 1"));
    }
    if ds.is_empty() {
        return Err(Error::invalid("cannot sample from an empty dataset"));
    }
    let idx = index::sample(rng, ds.len(), size.min(ds.len())).into_vec();
    Ok(ds.gather(&idx))
}
