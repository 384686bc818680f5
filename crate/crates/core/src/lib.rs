//! Early-life battery lifetime prediction.
//!
//! The pipeline runs in five stages:
//!
//! 1. [`dataset`]: ingest per-cycle discharge curves or pre-extracted feature
//!    tables, or simulate a fleet from the hierarchical generative model.
//! 2. [`features`]: compute the SOC-averaged charging C-rate `g` and the
//!    individual features F1-F3 from the ΔQ(V) curve and cycle-2 capacity.
//! 3. [`clustering`]: group cells by `g` with size-constrained K-means.
//! 4. [`hbm`]: fit the two-level hierarchical Bayesian linear model. Group
//!    coefficients are integrated out analytically and the hyper-parameters
//!    are sampled with adaptive random-walk Metropolis.
//! 5. [`baseline`] and [`eval`]: pooled ridge regression, RMSE/MAPE/VPC
//!    metrics and repeated k-fold cross-validation.

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod clustering;
pub mod dataset;
pub mod eval;
pub mod features;
pub mod hbm;
pub mod rng;
pub mod stats;

pub use baseline::{fit_ridge, select_lambda, BaselineError, RidgeModel};
pub use clustering::{assign_group, constrained_kmeans, ClusterConfig, ClusterError, GroupAssignment};
pub use dataset::{
    CellRecord, ChargeProtocol, ChargeStep, DatasetError, DischargeCurve, FeatureRow, FeatureTable,
    LabelTransform, SyntheticConfig, SyntheticTruth,
};
pub use eval::{mape, rmse, run_cv, vpc, EvalError, EvalReport, ModelSpec};
pub use features::{average_charge_crate, delta_q_curve, extract_features, FeatureError, FeatureVector, GridConfig};
pub use hbm::{
    marginal_log_likelihood, predict, sample_posterior, theta_conditional, GroupData, HbmError, HbmPosterior,
    McmcConfig, ModelConfig, PredictiveDistribution,
};

/// Errors from any pipeline stage, tagged with the stage that raised them.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dataset: {0}")]
    Dataset(#[from] DatasetError),
    #[error("features: {0}")]
    Features(#[from] FeatureError),
    #[error("clustering: {0}")]
    Clustering(#[from] ClusterError),
    #[error("hbm: {0}")]
    Hbm(#[from] HbmError),
    #[error("baseline: {0}")]
    Baseline(#[from] BaselineError),
    #[error("eval: {0}")]
    Eval(#[from] EvalError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
