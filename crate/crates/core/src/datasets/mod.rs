//! Benchmark ingestion, the canonical bundle format, normalization, regime
//! construction and batch assembly.
//!
//! Every adapter produces a [`DatasetBundle`]; training only ever reads
//! bundles, so raw formats are parsed once by `ingest`.

mod bundle;
mod formats;
mod regime;
pub mod synthetic;

use std::path::PathBuf;

use thiserror::Error;

use crate::diff::Array;

pub use bundle::{read_bundle, write_bundle, BUNDLE_DATA, BUNDLE_META};
pub use formats::{ingest_har_dir, ingest_mitbih_csv, ingest_ucr_tsv, HAR_CHANNELS, HAR_CLASSES, MITBIH_CLASSES};
pub use regime::{build_regime, make_batches, BatchPlan, Regime, RegimeSpec, VALIDATION_FRACTION};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}:{line}: expected {expected} values, got {got}")]
    Ragged { path: PathBuf, line: usize, expected: usize, got: usize },
    #[error("{path}:{line}: unknown label {label}")]
    UnknownLabel { path: PathBuf, line: usize, label: String },
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{what}: {left} rows vs {right} rows")]
    RowCountMismatch { what: String, left: usize, right: usize },
    #[error("invalid regime: {0}")]
    InvalidRegime(String),
    #[error("invalid bundle: {0}")]
    InvalidBundle(String),
    #[error("cannot batch: both the labeled and the unlabeled set are empty")]
    NothingToBatch,
}

/// One series with its values stored channel-major (`channels × length`).
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesSample {
    pub id: u64,
    pub label: Option<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub name: String,
    pub channels: usize,
    pub length: usize,
    pub class_names: Vec<String>,
    pub train: Vec<SeriesSample>,
    pub test: Vec<SeriesSample>,
}

impl DatasetBundle {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Checks sample shapes, finiteness, label range and id uniqueness.
    pub fn validate(&self) -> Result<(), DataError> {
        if self.channels == 0 || self.length == 0 {
            return Err(DataError::InvalidBundle("channels and length must be positive".into()));
        }
        if self.class_names.is_empty() {
            return Err(DataError::InvalidBundle("no classes".into()));
        }
        let width = self.channels * self.length;
        let mut ids = std::collections::HashSet::new();
        for s in self.train.iter().chain(&self.test) {
            if s.values.len() != width {
                return Err(DataError::InvalidBundle(format!(
                    "sample {} has {} values, expected {width}",
                    s.id,
                    s.values.len()
                )));
            }
            if s.values.iter().any(|v| !v.is_finite()) {
                return Err(DataError::InvalidBundle(format!("sample {} has non-finite values", s.id)));
            }
            if let Some(l) = s.label {
                if l >= self.n_classes() {
                    return Err(DataError::InvalidBundle(format!("sample {} has label {l}", s.id)));
                }
            }
            if !ids.insert(s.id) {
                return Err(DataError::InvalidBundle(format!("duplicate sample id {}", s.id)));
            }
        }
        Ok(())
    }

    pub fn train_counts(&self) -> Vec<usize> {
        class_counts(&self.train, self.n_classes())
    }

    pub fn test_counts(&self) -> Vec<usize> {
        class_counts(&self.test, self.n_classes())
    }
}

/// Per-class counts of the labeled samples in `samples`.
pub fn class_counts(samples: &[SeriesSample], n_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; n_classes];
    for l in samples.iter().filter_map(|s| s.label) {
        counts[l] += 1;
    }
    counts
}

/// Standardizes every channel of every sample over its own length.
/// A channel with standard deviation below `1e-8` is only mean-centred.
pub fn znormalize(mut bundle: DatasetBundle) -> DatasetBundle {
    let length = bundle.length;
    for s in bundle.train.iter_mut().chain(bundle.test.iter_mut()) {
        for channel in s.values.chunks_mut(length) {
            znormalize_channel(channel);
        }
    }
    bundle
}

fn znormalize_channel(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-8 {
        v.iter_mut().for_each(|x| *x -= mean);
    } else {
        v.iter_mut().for_each(|x| *x = (*x - mean) / std);
    }
}

/// Stacks the selected samples into a `(n, channels, length)` array.
pub fn stack(samples: &[SeriesSample], indices: &[usize], channels: usize, length: usize) -> Array {
    let mut data = Vec::with_capacity(indices.len() * channels * length);
    for &i in indices {
        data.extend_from_slice(&samples[i].values);
    }
    Array::new(vec![indices.len(), channels, length], data).expect("stack of samples with consistent shape")
}

/// Stacks every sample in order.
pub fn stack_all(samples: &[SeriesSample], channels: usize, length: usize) -> Array {
    let all: Vec<usize> = (0..samples.len()).collect();
    stack(samples, &all, channels, length)
}

/// Most frequent labeled class; ties go to the lowest index.
pub fn majority_class(train: &[SeriesSample], n_classes: usize) -> usize {
    let counts = class_counts(train, n_classes);
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: u64, label: usize, values: Vec<f64>) -> SeriesSample {
        SeriesSample { id, label: Some(label), values }
    }

    #[test]
    fn constant_channel_normalizes_to_zeros() {
        let b = DatasetBundle {
            name: "t".into(),
            channels: 2,
            length: 3,
            class_names: vec!["a".into()],
            train: vec![sample(0, 0, vec![4.0, 4.0, 4.0, 1.0, 2.0, 3.0])],
            test: vec![],
        };
        let n = znormalize(b);
        assert_eq!(&n.train[0].values[..3], &[0.0, 0.0, 0.0]);
        let ch = &n.train[0].values[3..];
        assert!(ch.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn majority_prefers_lowest_index_on_ties() {
        let s = vec![sample(0, 2, vec![0.0]), sample(1, 1, vec![0.0])];
        assert_eq!(majority_class(&s, 3), 1);
    }

    #[test]
    fn validate_rejects_duplicate_ids() {
        let b = DatasetBundle {
            name: "t".into(),
            channels: 1,
            length: 1,
            class_names: vec!["a".into()],
            train: vec![sample(0, 0, vec![0.0])],
            test: vec![sample(0, 0, vec![0.0])],
        };
        assert!(b.validate().is_err());
    }
}
