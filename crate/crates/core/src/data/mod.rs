//! Datasets, file formats, splits and checkpoints.

mod checkpoint;
mod counts;
mod dense;
mod labels;
mod mtx;
mod split;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Manifest, ModelBundle, FORMAT_VERSION, MANIFEST_FILE,
    PARAMS_FILE,
};
pub use counts::CountMatrix;
pub use dense::{load_dense_csv, DenseCsvOptions, DenseMatrix};
pub use labels::{read_lines, Labels};
pub use mtx::{load_mtx, write_mtx, Orientation};
pub use split::{split_indices, SplitName, SplitSpec, Splits};

use crate::model::Profile;

/// Dense targets for one batch, rows aligned with the requested indices.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchTargets {
    /// `[B × n]`
    pub values: Vec<f64>,
    /// Per-sample scaling constants; present for count data.
    pub scale: Option<Vec<f64>>,
}

/// Training or evaluation data for either profile.
#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Binary(DenseMatrix),
    Counts(CountMatrix),
}

impl Dataset {
    pub fn profile(&self) -> Profile {
        match self {
            Dataset::Binary(_) => Profile::Binary,
            Dataset::Counts(_) => Profile::Counts,
        }
    }

    pub fn n_samples(&self) -> usize {
        match self {
            Dataset::Binary(d) => d.n_samples(),
            Dataset::Counts(c) => c.n_samples(),
        }
    }

    /// Number of modelled features (decoder outputs).
    pub fn n_features(&self) -> usize {
        match self {
            Dataset::Binary(d) => d.n_features(),
            Dataset::Counts(c) => c.n_modelled(),
        }
    }

    pub fn labels(&self) -> Option<&Labels> {
        match self {
            Dataset::Binary(d) => d.labels(),
            Dataset::Counts(c) => c.labels(),
        }
    }

    /// Densifies the given rows.
    pub fn gather(&self, rows: &[usize]) -> BatchTargets {
        match self {
            Dataset::Binary(d) => BatchTargets {
                values: d.gather(rows),
                scale: None,
            },
            Dataset::Counts(c) => {
                let (values, scale) = c.gather(rows);
                BatchTargets {
                    values,
                    scale: Some(scale),
                }
            }
        }
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        match self {
            Dataset::Binary(d) => Dataset::Binary(d.subset(rows)),
            Dataset::Counts(c) => Dataset::Counts(c.subset(rows)),
        }
    }
}
