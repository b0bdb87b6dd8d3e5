//! Data-driven fault features: PCA monitoring model and reconstruction-based
//! contributions over a fault window.

mod data;
mod pca;
mod rbc;

pub use data::DataMatrix;
pub use pca::{MatrixRecord, PcaModel, PcaModelFile};
pub use rbc::{
    contribution_rate, rbc, rbc_spe, rbc_t2, NormalizationOrder, RbcScores, RbcStatistic,
    DIAGONAL_FLOOR,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default number of post-onset samples averaged into a contribution rate.
pub const DEFAULT_WINDOW: usize = 100;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("csv error: {0}")]
    Csv(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("constant column `{0}` cannot be standardized")]
    ConstantColumn(String),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("eigendecomposition failed: {0}")]
    Eigen(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("window exceeds dataset: rows [{start}, {start}+{len}) requested, {rows} available")]
    Window { start: usize, len: usize, rows: usize },
    #[error("fault window is empty")]
    EmptyWindow,
    #[error("every sample in the fault window has zero contribution")]
    AllZero,
}

/// Nonnegative per-variable scores, aligned to `roster` (column names at the
/// model level, entity ids once bound to the graph).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionVector {
    roster: Vec<String>,
    scores: Vec<f64>,
}

impl ContributionVector {
    pub fn new(roster: Vec<String>, scores: Vec<f64>) -> Self {
        assert_eq!(roster.len(), scores.len(), "roster/score length mismatch");
        Self { roster, scores }
    }

    pub fn roster(&self) -> &[String] {
        &self.roster
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.roster.iter().position(|r| r == name).map(|i| self.scores[i])
    }

    /// Rescaled to sum to one; unchanged if the sum is zero.
    pub fn normalized(&self) -> Self {
        let total: f64 = self.scores.iter().sum();
        if total > 0.0 {
            Self::new(self.roster.clone(), self.scores.iter().map(|s| s / total).collect())
        } else {
            self.clone()
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::new(self.roster.clone(), self.scores.iter().map(|s| s * c).collect())
    }

    /// Keeps entries whose name maps through `rename`, in the original order,
    /// renamed. Used to move from dataset columns to graph entity ids.
    pub fn rebind<F>(&self, mut rename: F) -> Self
    where
        F: FnMut(&str) -> Option<String>,
    {
        let (roster, scores) = self
            .roster
            .iter()
            .zip(&self.scores)
            .filter_map(|(r, &s)| rename(r).map(|id| (id, s)))
            .unzip();
        Self { roster, scores }
    }
}
