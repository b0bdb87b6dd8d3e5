//! Reconstruction-based contributions.
//!
//! For a detection index `x^T M x` the contribution of variable `i` is the
//! drop in the index obtained by reconstructing `x` along the `i`-th axis,
//! which has the closed form `(e_i^T M x)^2 / m_ii`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ContributionVector, DataMatrix, FeatureError, PcaModel};

/// Diagonal entries at or below this are treated as zero.
pub const DIAGONAL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RbcStatistic {
    #[default]
    Spe,
    T2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationOrder {
    /// Normalize each sample's contributions, then average.
    #[default]
    PerSample,
    /// Average raw contributions, then normalize once.
    PostAverage,
}

/// Raw per-variable contributions of one sample. `flagged` lists variables
/// whose diagonal entry fell below [`DIAGONAL_FLOOR`]; their score is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct RbcScores {
    pub scores: Vec<f64>,
    pub flagged: Vec<usize>,
}

fn reconstruct(metric: &DMatrix<f64>, z: &DVector<f64>) -> RbcScores {
    let v = metric * z;
    let mut flagged = Vec::new();
    let scores = (0..z.len())
        .map(|i| {
            let mii = metric[(i, i)];
            if mii <= DIAGONAL_FLOOR {
                flagged.push(i);
                0.0
            } else {
                v[i] * v[i] / mii
            }
        })
        .collect();
    RbcScores { scores, flagged }
}

pub fn rbc_spe(model: &PcaModel, sample: &DVector<f64>) -> Result<RbcScores, FeatureError> {
    let z = model.standardize(sample)?;
    Ok(reconstruct(model.proj_res(), &z))
}

pub fn rbc_t2(model: &PcaModel, sample: &DVector<f64>) -> Result<RbcScores, FeatureError> {
    let z = model.standardize(sample)?;
    Ok(reconstruct(model.d_matrix(), &z))
}

pub fn rbc(
    model: &PcaModel,
    sample: &DVector<f64>,
    statistic: RbcStatistic,
) -> Result<RbcScores, FeatureError> {
    match statistic {
        RbcStatistic::Spe => rbc_spe(model, sample),
        RbcStatistic::T2 => rbc_t2(model, sample),
    }
}

/// Average contribution rate over a fault window. The window's columns are
/// matched to the model by name.
pub fn contribution_rate(
    model: &PcaModel,
    window: &DataMatrix,
    statistic: RbcStatistic,
    order: NormalizationOrder,
) -> Result<ContributionVector, FeatureError> {
    if window.nrows() == 0 {
        return Err(FeatureError::EmptyWindow);
    }
    let window = if window.columns() == model.columns() {
        window.clone()
    } else {
        window.select(model.columns())?
    };
    let n = model.n_vars();
    let mut acc = vec![0.0; n];
    let mut used = 0usize;
    let mut warned = false;
    for i in 0..window.nrows() {
        let r = rbc(model, &window.row(i), statistic)?;
        if !r.flagged.is_empty() && !warned {
            let names: Vec<&str> = r.flagged.iter().map(|&j| model.columns()[j].as_str()).collect();
            log::warn!(
                "near-singular reconstruction diagonal, contribution forced to 0 for: {}",
                names.join(", ")
            );
            warned = true;
        }
        let total: f64 = r.scores.iter().sum();
        match order {
            NormalizationOrder::PerSample => {
                if total > 0.0 {
                    for (a, s) in acc.iter_mut().zip(&r.scores) {
                        *a += s / total;
                    }
                    used += 1;
                }
            }
            NormalizationOrder::PostAverage => {
                for (a, s) in acc.iter_mut().zip(&r.scores) {
                    *a += s;
                }
                if total > 0.0 {
                    used += 1;
                }
            }
        }
    }
    if used == 0 {
        return Err(FeatureError::AllZero);
    }
    let total: f64 = acc.iter().sum();
    let scores = acc.into_iter().map(|a| a / total).collect();
    Ok(ContributionVector::new(model.columns().to_vec(), scores))
}
