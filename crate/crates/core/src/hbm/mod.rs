//! Two-level hierarchical Bayesian linear model.
//!
//! Level 1: `y_i = x_iᵀ θ_j + ε_i` with `ε_i ~ N(0, σ_y²)` for cell `i` in
//! group `j`. Level 2: `θ_j ~ N(γ [1, g_j]ᵀ, diag(σ²))`. The group
//! coefficients are integrated out, the hyper-parameters `(γ, σ, σ_y)` are
//! sampled, and each draw carries the conjugate Gaussian over `θ_j`.

mod collapsed;
mod diagnostics;
mod model;
mod predict;
mod sampler;

use serde::{Deserialize, Serialize};

pub use diagnostics::{effective_sample_size, mcse_mean, split_rhat};
pub use model::{
    marginal_log_likelihood, marginal_log_likelihood_stats, prior_mean, theta_conditional, theta_conditional_stats,
    CoefGaussian, GroupData, SufficientStats, MARGINAL_JITTER,
};
pub use predict::{predict, predict_design, GroupTarget, PredictiveDistribution};
pub use collapsed::{gamma_given_scales, GammaGaussian};
pub use sampler::{sample_posterior, Diagnostics, GroupSummary, HbmPosterior, McmcConfig, SamplerScheme};

use crate::clustering::{assign_group, GroupAssignment};
use crate::dataset::{FeatureTable, LabelTransform};
use crate::stats::Standardizer;

#[derive(Debug, thiserror::Error)]
pub enum HbmError {
    #[error("no groups with data")]
    NoGroups,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("marginal covariance is not positive definite (condition number {condition_number:.3e})")]
    NotPositiveDefinite { condition_number: f64 },
    #[error("conditional precision is singular")]
    SingularPrecision,
    #[error("sampler failed to move: acceptance below 1% in every chain {acceptance:?}")]
    Divergent { acceptance: Vec<f64> },
    #[error("group {0} is not part of the fitted model")]
    UnseenGroup(usize),
    #[error("training table has unlabeled cell {0}")]
    MissingLabel(String),
    #[error("malformed posterior: {0}")]
    Format(String),
}

/// Prior on the per-coefficient group scales `σ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalePrior {
    HalfNormal { scale: f64 },
    /// Holds `σ` fixed at the given values.
    Fixed { values: Vec<f64> },
}

impl Default for ScalePrior {
    fn default() -> Self {
        ScalePrior::HalfNormal { scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Level-1 noise scale, or its starting value when `sigma_y_prior` is set.
    pub sigma_y: f64,
    /// Half-normal scale of a prior on `σ_y`; `None` keeps `σ_y` fixed.
    pub sigma_y_prior: Option<f64>,
    /// Standard deviation of the Gaussian prior on each entry of `γ`.
    pub hyper_prior_scale: f64,
    pub scale_prior: ScalePrior,
    pub label_transform: LabelTransform,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            sigma_y: 1.0,
            sigma_y_prior: None,
            hyper_prior_scale: 10.0,
            scale_prior: ScalePrior::default(),
            label_transform: LabelTransform::Log10,
        }
    }
}

fn positive(x: f64) -> bool {
    x > 0.0 && x.is_finite()
}

impl ModelConfig {
    pub fn validate(&self, p: usize) -> Result<(), HbmError> {
        if !positive(self.sigma_y) {
            return Err(HbmError::InvalidConfig(format!("sigma_y {} is not positive", self.sigma_y)));
        }
        if !positive(self.hyper_prior_scale) {
            return Err(HbmError::InvalidConfig(format!("hyper_prior_scale {} is not positive", self.hyper_prior_scale)));
        }
        if let Some(s) = self.sigma_y_prior {
            if !positive(s) {
                return Err(HbmError::InvalidConfig(format!("sigma_y_prior {s} is not positive")));
            }
        }
        match &self.scale_prior {
            ScalePrior::HalfNormal { scale } if !positive(*scale) => {
                Err(HbmError::InvalidConfig(format!("scale prior {scale} is not positive")))
            }
            ScalePrior::Fixed { values } if values.len() != p => {
                Err(HbmError::Dimension(format!("{} fixed scales for {p} coefficients", values.len())))
            }
            ScalePrior::Fixed { values } if !values.iter().all(|v| positive(*v)) => {
                Err(HbmError::InvalidConfig(format!("fixed scales {values:?} must be positive")))
            }
            _ => Ok(()),
        }
    }
}

/// Builds per-cluster group data from a labeled feature table. Features are
/// standardized with statistics of this table; labels go through the
/// configured transform. Cells missing from `assignment` join the nearest
/// centroid. Every cluster gets a group, possibly empty, with `g` at its
/// centroid.
pub fn build_groups(
    table: &FeatureTable,
    assignment: &GroupAssignment,
    transform: LabelTransform,
) -> Result<(Vec<GroupData>, Standardizer), HbmError> {
    let rows: Vec<Vec<f64>> = table.rows().iter().map(|r| r.individual().to_vec()).collect();
    let standardizer = Standardizer::fit(&rows);
    let p = standardizer.dim() + 1;
    let mut features = vec![Vec::new(); assignment.k];
    let mut labels = vec![Vec::new(); assignment.k];
    for (row, raw) in table.rows().iter().zip(&rows) {
        let label = row.label.ok_or_else(|| HbmError::MissingLabel(row.cell_id.clone()))?;
        let j = assignment.group_of(&row.cell_id).unwrap_or_else(|| assign_group(row.g, assignment));
        features[j].push(standardizer.apply(raw));
        labels[j].push(transform.forward(label));
    }
    let groups = (0..assignment.k)
        .map(|j| GroupData::from_rows(j, &features[j], &labels[j], assignment.centroids[j], p))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((groups, standardizer))
}

/// Fits the model on a labeled table grouped by `assignment`.
pub fn fit_table(
    table: &FeatureTable,
    assignment: &GroupAssignment,
    config: &ModelConfig,
    mcmc: &McmcConfig,
    seed: u64,
) -> Result<HbmPosterior, HbmError> {
    let (groups, standardizer) = build_groups(table, assignment, config.label_transform)?;
    let mut posterior = sample_posterior(&groups, config, mcmc, seed)?;
    posterior.standardizer = standardizer;
    posterior.label_transform = config.label_transform;
    Ok(posterior)
}
