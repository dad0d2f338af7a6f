//! Hypothesis testing and classification on (joint) score features.

mod baseline;
mod diproperm;
mod dwd;
mod holdout;
mod roc;

pub use baseline::{baseline_features, baseline_features_spherical, euclidean_ajive, BaselineFeatures, BaselineKind, BaselineSettings};
pub use diproperm::{diproperm, DiProPermResult, DEFAULT_N_PERM};
pub use dwd::{train_dwd, train_mean_difference, LinearClassifier, Loss, DWD_MAX_ITER, DWD_TOL};
pub use holdout::{
    default_lambda_grid, holdout_harness, stratified_folds, stratified_split, FeatureSource, HoldoutConfig,
    HoldoutReport, PrecomputedFeatures, Protocol, StrictNeujiveFeatures,
};
pub use roc::{auc, roc_auc};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feature matrix (`p x n`, columns are cases) with binary labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledScores {
    #[serde(with = "crate::serde_mat")]
    pub features: DMatrix<f64>,
    pub labels: Vec<u8>,
}

impl LabeledScores {
    pub fn new(features: DMatrix<f64>, labels: Vec<u8>) -> Result<Self> {
        if features.ncols() != labels.len() {
            return Err(Error::CaseMismatch(format!(
                "{} feature columns for {} labels",
                features.ncols(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|l| **l > 1) {
            return Err(Error::InvalidConfig(format!("label {l} is not binary")));
        }
        Ok(LabeledScores { features, labels })
    }

    pub fn n_cases(&self) -> usize {
        self.labels.len()
    }

    pub fn class_count(&self, class: u8) -> usize {
        self.labels.iter().filter(|l| **l == class).count()
    }

    /// Columns `idx` as a new set.
    pub fn subset(&self, idx: &[usize]) -> LabeledScores {
        LabeledScores {
            features: select_columns(&self.features, idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

pub(crate) fn select_columns(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), idx.len(), |i, j| m[(i, idx[j])])
}
