//! Labeled feature datasets, the synthetic domain generator, and feature-file
//! I/O.

mod io;
mod synth;

pub use io::{decode_features, encode_features, read_csv, read_features, write_csv, write_features, SMFT_MAGIC, SMFT_VERSION};
pub use synth::{blobs3, gen_domain, Blobs3, DomainSpec, Domains};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Feature matrix plus labels for one domain. Target domains carry no labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Matrix,
    /// Empty for unlabeled data.
    pub labels: Vec<usize>,
    pub name: String,
}

impl LabeledDataset {
    pub fn new(features: Matrix, labels: Vec<usize>, name: impl Into<String>) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::DimensionMismatch {
                context: "dataset labels",
                expected: features.rows(),
                found: labels.len(),
            });
        }
        Self::checked(features, labels, name.into())
    }

    pub fn unlabeled(features: Matrix, name: impl Into<String>) -> Result<Self> {
        Self::checked(features, Vec::new(), name.into())
    }

    fn checked(features: Matrix, labels: Vec<usize>, name: String) -> Result<Self> {
        if !features.is_finite() {
            return Err(Error::NonFinite("dataset features"));
        }
        Ok(Self {
            features,
            labels,
            name,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn is_labeled(&self) -> bool {
        !self.labels.is_empty() || self.is_empty()
    }

    /// Highest label + 1, or 0 when unlabeled.
    pub fn label_span(&self) -> usize {
        self.labels.iter().max().map_or(0, |&m| m + 1)
    }

    pub fn class_counts(&self, classes: usize) -> Vec<usize> {
        let mut counts = vec![0; classes];
        for &y in &self.labels {
            if y < classes {
                counts[y] += 1;
            }
        }
        counts
    }

    /// Drops labels, keeping only what a target node would hold.
    pub fn without_labels(&self) -> Self {
        Self {
            features: self.features.clone(),
            labels: Vec::new(),
            name: self.name.clone(),
        }
    }

    /// Concatenates datasets with the same feature width.
    pub fn concat(parts: &[&LabeledDataset], name: impl Into<String>) -> Result<Self> {
        let first = parts.first().ok_or(Error::Empty("datasets to concatenate"))?;
        let mut features = first.features.clone();
        let mut labels = first.labels.clone();
        for p in &parts[1..] {
            features = features.vstack(&p.features)?;
            labels.extend_from_slice(&p.labels);
        }
        Self::new(features, labels, name)
    }

    /// Appends a sentinel row whose bytes are recognisable by the privacy
    /// auditor. Returns the row index.
    pub fn plant_canary(&mut self, tag: u8) -> usize {
        let row = canary_row(tag, self.dim());
        let extra = Matrix::from_vec(1, row.len(), row).expect("canary row");
        self.features = self.features.vstack(&extra).expect("canary width");
        if !self.labels.is_empty() {
            self.labels.push(0);
        }
        self.len() - 1
    }
}

const CANARY_PREFIX: &[u8; 4] = b"CNRY";

/// Sentinel feature row: every value's little-endian bytes spell
/// `CNRY<tag><column>` in ASCII hex, so the row is unique per tag and column.
pub fn canary_row(tag: u8, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|c| {
            let text = format!("CNRY{:02X}{:02X}", tag, c as u8);
            let bytes: [u8; 8] = text.as_bytes().try_into().expect("8 ascii bytes");
            f64::from_le_bytes(bytes)
        })
        .collect()
}

pub fn is_canary_row(row: &[f64]) -> bool {
    row.first()
        .is_some_and(|v| v.to_le_bytes().starts_with(CANARY_PREFIX))
}
