//! Error metrics and repeated k-fold cross-validation of the hierarchical
//! model against pooled baselines.

mod metrics;
mod plot;

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{mape, rmse, vpc};
pub use plot::{emit_plot_data, svg_point, write_trials_csv, HIST_CSV_HEADER, SCATTER_CSV_HEADER, TRIALS_CSV_HEADER};

use crate::baseline::{self, default_lambda_grid, BaselineError, RidgeFeature};
use crate::clustering::{assign_group, constrained_kmeans, ClusterConfig, ClusterError};
use crate::dataset::FeatureTable;
use crate::hbm::{self, GroupTarget, HbmError, McmcConfig, ModelConfig};
use crate::rng::{derive_seed, rng_from};
use crate::stats::{mean, median, Standardizer};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{pred} predictions for {truth} truth values")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("no values to score")]
    Empty,
    #[error("truth value {value} at position {index} must be positive")]
    NonPositiveTruth { index: usize, value: f64 },
    #[error("variance partition undefined: {0}")]
    VpcUndefined(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("cell {0} has no label")]
    Unlabeled(String),
    #[error("repeat {repeat} fold {fold}: {source}; reduce min_size or the number of clusters")]
    Clustering { repeat: usize, fold: usize, source: ClusterError },
    #[error("{model} on repeat {repeat} fold {fold}: {message}")]
    Model { model: String, repeat: usize, fold: usize, message: String },
    #[error("{0}")]
    Hbm(#[from] HbmError),
    #[error("{0}")]
    Baseline(#[from] BaselineError),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Hbm { model: ModelConfig, mcmc: McmcConfig },
    Ridge { features: Vec<RidgeFeature>, lambda_grid: Vec<f64>, inner_folds: usize },
    /// Predicts the mean training lifetime in days for every cell.
    TrainingMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ModelKind,
}

impl ModelSpec {
    pub fn hbm(model: ModelConfig, mcmc: McmcConfig) -> Self {
        Self { name: "hbm".into(), kind: ModelKind::Hbm { model, mcmc } }
    }

    pub fn ridge(name: &str, features: &[RidgeFeature]) -> Self {
        Self {
            name: name.into(),
            kind: ModelKind::Ridge { features: features.to_vec(), lambda_grid: default_lambda_grid(), inner_folds: 5 },
        }
    }

    /// Ridge on F1-F3.
    pub fn ridge3() -> Self {
        Self::ridge("ridge3", &RidgeFeature::THREE)
    }

    /// Ridge on F1-F3 and g.
    pub fn ridge4() -> Self {
        Self::ridge("ridge4", &RidgeFeature::FOUR)
    }

    pub fn training_mean() -> Self {
        Self { name: "mean".into(), kind: ModelKind::TrainingMean }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub folds: usize,
    pub repeats: usize,
    /// Model whose aggregates anchor the improvement percentages.
    pub reference: String,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self { folds: 5, repeats: 4, reference: "ridge3".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub model: String,
    pub repeat: usize,
    pub fold: usize,
    pub rmse_days: f64,
    pub mape_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub model: String,
    pub repeat: usize,
    pub fold: usize,
    pub cell_id: String,
    pub actual_days: f64,
    pub predicted_days: f64,
}

/// What each trial was trained on, logged so leakage can be audited.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub repeat: usize,
    pub fold: usize,
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub centroids: Vec<f64>,
    /// Standardization of F1-F3 fitted on the training cells.
    pub standardizer: Standardizer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub model: String,
    pub trials: usize,
    pub median_rmse: f64,
    pub mean_rmse: f64,
    pub median_mape: f64,
    pub mean_mape: f64,
}

/// `(reference − model) / reference · 100` for each aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub model: String,
    pub reference: String,
    pub median_rmse: f64,
    pub mean_rmse: f64,
    pub median_mape: f64,
    pub mean_mape: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub cv: CvConfig,
    pub cluster_config: ClusterConfig,
    pub models: Vec<ModelSpec>,
    pub per_trial: Vec<TrialRow>,
    pub aggregates: Vec<Aggregate>,
    pub improvement: Vec<Improvement>,
    /// Variance partition of the transformed labels under a clustering of
    /// the full dataset.
    pub vpc: f64,
    pub folds: Vec<FoldRecord>,
    pub predictions: Vec<PredictionRow>,
}

/// Aggregates per model, in order of first appearance.
pub fn aggregate(per_trial: &[TrialRow]) -> Vec<Aggregate> {
    let mut order: Vec<&str> = Vec::new();
    for t in per_trial {
        if !order.contains(&t.model.as_str()) {
            order.push(&t.model);
        }
    }
    order
        .into_iter()
        .map(|m| {
            let rmses: Vec<f64> = per_trial.iter().filter(|t| t.model == m).map(|t| t.rmse_days).collect();
            let mapes: Vec<f64> = per_trial.iter().filter(|t| t.model == m).map(|t| t.mape_percent).collect();
            Aggregate {
                model: m.to_string(),
                trials: rmses.len(),
                median_rmse: median(&rmses),
                mean_rmse: mean(&rmses),
                median_mape: median(&mapes),
                mean_mape: mean(&mapes),
            }
        })
        .collect()
}

fn percent_better(reference: f64, model: f64) -> f64 {
    (reference - model) / reference * 100.0
}

pub fn improvements(aggregates: &[Aggregate], reference: &str) -> Vec<Improvement> {
    let Some(r) = aggregates.iter().find(|a| a.model == reference) else {
        return Vec::new();
    };
    aggregates
        .iter()
        .map(|a| Improvement {
            model: a.model.clone(),
            reference: reference.to_string(),
            median_rmse: percent_better(r.median_rmse, a.median_rmse),
            mean_rmse: percent_better(r.mean_rmse, a.mean_rmse),
            median_mape: percent_better(r.median_mape, a.median_mape),
            mean_mape: percent_better(r.mean_mape, a.mean_mape),
        })
        .collect()
}

struct TrialOutput {
    record: FoldRecord,
    rows: Vec<TrialRow>,
    predictions: Vec<PredictionRow>,
}

fn model_error(spec: &ModelSpec, repeat: usize, fold: usize, e: impl std::fmt::Display) -> EvalError {
    EvalError::Model { model: spec.name.clone(), repeat, fold, message: e.to_string() }
}

#[allow(clippy::too_many_arguments)]
fn run_trial(
    table: &FeatureTable,
    train_idx: &[usize],
    test_idx: &[usize],
    models: &[ModelSpec],
    cluster_config: &ClusterConfig,
    seed: u64,
    repeat: usize,
    fold: usize,
) -> Result<TrialOutput, EvalError> {
    let train = table.subset(train_idx);
    let test = table.subset(test_idx);
    let g_values: BTreeMap<String, f64> = train.rows().iter().map(|r| (r.cell_id.clone(), r.g)).collect();
    let assignment = constrained_kmeans(&g_values, cluster_config, derive_seed(seed, &[repeat as u64, fold as u64, 1]))
        .map_err(|source| EvalError::Clustering { repeat, fold, source })?;
    let train_rows: Vec<Vec<f64>> = train.rows().iter().map(|r| r.individual().to_vec()).collect();
    let record = FoldRecord {
        repeat,
        fold,
        train: train.rows().iter().map(|r| r.cell_id.clone()).collect(),
        test: test.rows().iter().map(|r| r.cell_id.clone()).collect(),
        centroids: assignment.centroids.clone(),
        standardizer: Standardizer::fit(&train_rows),
    };

    let truth: Vec<f64> = test.rows().iter().map(|r| r.label.expect("labels checked")).collect();
    let mut rows = Vec::with_capacity(models.len());
    let mut predictions = Vec::new();
    for (m, spec) in models.iter().enumerate() {
        let model_seed = derive_seed(seed, &[repeat as u64, fold as u64, 2, m as u64]);
        let pred: Vec<f64> = match &spec.kind {
            ModelKind::Hbm { model, mcmc } => {
                let post = hbm::fit_table(&train, &assignment, model, mcmc, model_seed)
                    .map_err(|e| model_error(spec, repeat, fold, e))?;
                test.rows()
                    .iter()
                    .map(|r| {
                        let x = crate::features::FeatureVector { g: r.g, f1: r.f1, f2: r.f2, f3: r.f3 };
                        hbm::predict(&x, GroupTarget::Fitted(assign_group(r.g, &assignment)), &post)
                            .map(|d| d.point_estimate_days)
                    })
                    .collect::<Result<_, _>>()
                    .map_err(|e| model_error(spec, repeat, fold, e))?
            }
            ModelKind::Ridge { features, lambda_grid, inner_folds } => {
                let model = baseline::fit_table(&train, features, lambda_grid, *inner_folds, table.label_transform(), model_seed)
                    .map_err(|e| model_error(spec, repeat, fold, e))?;
                test.rows().iter().map(|r| model.predict_row_days(r)).collect()
            }
            ModelKind::TrainingMean => {
                let labels: Vec<f64> = train.rows().iter().filter_map(|r| r.label).collect();
                vec![mean(&labels); test.len()]
            }
        };
        rows.push(TrialRow {
            model: spec.name.clone(),
            repeat,
            fold,
            rmse_days: rmse(&pred, &truth)?,
            mape_percent: mape(&pred, &truth)?,
        });
        predictions.extend(test.rows().iter().zip(&pred).map(|(r, p)| PredictionRow {
            model: spec.name.clone(),
            repeat,
            fold,
            cell_id: r.cell_id.clone(),
            actual_days: r.label.expect("labels checked"),
            predicted_days: *p,
        }));
    }
    Ok(TrialOutput { record, rows, predictions })
}

/// Repeated k-fold cross-validation. Clustering, standardization and model
/// fitting see only the training cells of each trial; held-out cells join
/// the nearest training centroid. Scores are in days.
pub fn run_cv(
    table: &FeatureTable,
    models: &[ModelSpec],
    cv: &CvConfig,
    cluster_config: &ClusterConfig,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    if cv.folds < 2 || cv.repeats < 1 {
        return Err(EvalError::InvalidConfig(format!("need folds ≥ 2 and repeats ≥ 1 (got {} and {})", cv.folds, cv.repeats)));
    }
    if models.is_empty() {
        return Err(EvalError::InvalidConfig("no models to evaluate".into()));
    }
    let mut names: Vec<&str> = models.iter().map(|m| m.name.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(EvalError::InvalidConfig("model names must be unique".into()));
    }
    if let Some(r) = table.rows().iter().find(|r| r.label.is_none()) {
        return Err(EvalError::Unlabeled(r.cell_id.clone()));
    }
    let n = table.len();
    if n < cv.folds {
        return Err(EvalError::InvalidConfig(format!("{n} cells cannot fill {} folds", cv.folds)));
    }

    let mut jobs = Vec::with_capacity(cv.repeats * cv.folds);
    for repeat in 0..cv.repeats {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_from(seed, &[0x4356, repeat as u64]));
        for fold in 0..cv.folds {
            let test: Vec<usize> = order.iter().enumerate().filter(|(p, _)| p % cv.folds == fold).map(|(_, &i)| i).collect();
            let mut test_sorted = test.clone();
            test_sorted.sort_unstable();
            let train: Vec<usize> = (0..n).filter(|i| test_sorted.binary_search(i).is_err()).collect();
            jobs.push((repeat, fold, train, test_sorted));
        }
    }

    let outputs: Vec<TrialOutput> = jobs
        .par_iter()
        .map(|(repeat, fold, train, test)| run_trial(table, train, test, models, cluster_config, seed, *repeat, *fold))
        .collect::<Result<_, _>>()?;

    let mut per_trial = Vec::new();
    let mut predictions = Vec::new();
    let mut folds = Vec::new();
    for out in outputs {
        per_trial.extend(out.rows);
        predictions.extend(out.predictions);
        folds.push(out.record);
    }
    let aggregates = aggregate(&per_trial);
    let improvement = improvements(&aggregates, &cv.reference);

    let g_values: BTreeMap<String, f64> = table.rows().iter().map(|r| (r.cell_id.clone(), r.g)).collect();
    let full = constrained_kmeans(&g_values, cluster_config, derive_seed(seed, &[0x5650_4300]))
        .map_err(|e| EvalError::InvalidConfig(format!("clustering the full dataset: {e}")))?;
    let transform = table.label_transform();
    let labels: Vec<f64> = table.rows().iter().map(|r| transform.forward(r.label.expect("labels checked"))).collect();
    let membership: Vec<usize> = table.rows().iter().map(|r| full.membership[&r.cell_id]).collect();
    let vpc = vpc(&labels, &membership)?;

    Ok(EvalReport {
        seed,
        cv: cv.clone(),
        cluster_config: *cluster_config,
        models: models.to_vec(),
        per_trial,
        aggregates,
        improvement,
        vpc,
        folds,
        predictions,
    })
}
