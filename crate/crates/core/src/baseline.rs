//! Pooled ridge regression on standardized features with an unpenalized
//! intercept.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureRow, FeatureTable, LabelTransform};
use crate::rng::rng_from;
use crate::stats::Standardizer;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BaselineError {
    #[error("no training samples")]
    Empty,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("ridge system is singular at lambda = {0}; use lambda > 0 or drop collinear features")]
    Singular(f64),
    #[error("lambda {0} must be finite and non-negative")]
    InvalidLambda(f64),
    #[error("lambda grid is empty")]
    EmptyGrid,
    #[error("inner_folds must be at least 2 (got {0})")]
    TooFewFolds(usize),
    #[error("{n} samples cannot fill {folds} folds")]
    TooFewSamples { n: usize, folds: usize },
    #[error("cell {0} has no label")]
    MissingLabel(String),
    #[error("unknown feature {0:?}; expected one of g, f1, f2, f3")]
    UnknownFeature(String),
}

/// Feature columns available from a [`FeatureRow`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RidgeFeature {
    G,
    F1,
    F2,
    F3,
}

impl RidgeFeature {
    pub const THREE: [RidgeFeature; 3] = [RidgeFeature::F1, RidgeFeature::F2, RidgeFeature::F3];
    pub const FOUR: [RidgeFeature; 4] = [RidgeFeature::F1, RidgeFeature::F2, RidgeFeature::F3, RidgeFeature::G];

    pub fn value(self, row: &FeatureRow) -> f64 {
        match self {
            RidgeFeature::G => row.g,
            RidgeFeature::F1 => row.f1,
            RidgeFeature::F2 => row.f2,
            RidgeFeature::F3 => row.f3,
        }
    }

    pub fn parse_list(s: &str) -> Result<Vec<RidgeFeature>, BaselineError> {
        s.split(',').map(|t| t.trim().parse()).collect()
    }
}

impl FromStr for RidgeFeature {
    type Err = BaselineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "g" => Ok(RidgeFeature::G),
            "f1" => Ok(RidgeFeature::F1),
            "f2" => Ok(RidgeFeature::F2),
            "f3" => Ok(RidgeFeature::F3),
            _ => Err(BaselineError::UnknownFeature(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    /// Coefficients on the standardized features.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub standardizer: Standardizer,
    /// Columns taken from feature rows; empty for models fit on a raw design.
    pub features: Vec<RidgeFeature>,
    pub label_transform: LabelTransform,
}

impl RidgeModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let z = self.standardizer.apply(x);
        self.intercept + z.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Prediction on the transformed label scale.
    pub fn predict_row(&self, row: &FeatureRow) -> f64 {
        let x: Vec<f64> = self.features.iter().map(|f| f.value(row)).collect();
        self.predict(&x)
    }

    pub fn predict_row_days(&self, row: &FeatureRow) -> f64 {
        self.label_transform.inverse(self.predict_row(row))
    }
}

/// 13 values spaced evenly in log10 over `[1e-4, 1e2]`.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..13).map(|i| 10f64.powf(-4.0 + 0.5 * i as f64)).collect()
}

fn check_design(design: &[Vec<f64>], labels: &[f64]) -> Result<usize, BaselineError> {
    if design.is_empty() {
        return Err(BaselineError::Empty);
    }
    if design.len() != labels.len() {
        return Err(BaselineError::Dimension(format!("{} rows but {} labels", design.len(), labels.len())));
    }
    let p = design[0].len();
    if let Some(r) = design.iter().find(|r| r.len() != p) {
        return Err(BaselineError::Dimension(format!("row of length {} in a design with {p} columns", r.len())));
    }
    Ok(p)
}

/// Minimizes `‖y − Zβ − b‖² + λ‖β‖²` where `Z` is the standardized design.
pub fn fit_ridge(design: &[Vec<f64>], labels: &[f64], lambda: f64) -> Result<RidgeModel, BaselineError> {
    let p = check_design(design, labels)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(BaselineError::InvalidLambda(lambda));
    }
    let standardizer = Standardizer::fit(design);
    let n = design.len();
    let y_mean = labels.iter().sum::<f64>() / n as f64;
    let z = DMatrix::from_fn(n, p, |i, k| standardizer.apply(&design[i])[k]);
    let yc = DVector::from_iterator(n, labels.iter().map(|y| y - y_mean));
    let mut a = z.transpose() * &z;
    if lambda == 0.0 && p > 0 {
        let eig = a.clone().symmetric_eigenvalues();
        let hi = eig.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        let lo = eig.iter().fold(f64::INFINITY, |m, e| m.min(*e));
        if !(lo > 1e-12 * hi.max(1.0)) {
            return Err(BaselineError::Singular(lambda));
        }
    }
    for k in 0..p {
        a[(k, k)] += lambda;
    }
    let rhs = z.transpose() * yc;
    let beta = a.cholesky().ok_or(BaselineError::Singular(lambda))?.solve(&rhs);
    // standardized columns are centred, so the intercept is the label mean
    Ok(RidgeModel {
        coefficients: beta.iter().copied().collect(),
        intercept: y_mean,
        lambda,
        standardizer,
        features: Vec::new(),
        label_transform: LabelTransform::Identity,
    })
}

/// Grid value with the smallest inner-CV RMSE; ties go to the smaller λ.
pub fn select_lambda(
    design: &[Vec<f64>],
    labels: &[f64],
    lambda_grid: &[f64],
    inner_folds: usize,
    seed: u64,
) -> Result<f64, BaselineError> {
    check_design(design, labels)?;
    if lambda_grid.is_empty() {
        return Err(BaselineError::EmptyGrid);
    }
    if let Some(&bad) = lambda_grid.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(BaselineError::InvalidLambda(bad));
    }
    if inner_folds < 2 {
        return Err(BaselineError::TooFewFolds(inner_folds));
    }
    let n = design.len();
    if n < inner_folds {
        return Err(BaselineError::TooFewSamples { n, folds: inner_folds });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from(seed, &[0x5249_4447]));
    let fold_of: Vec<usize> = {
        let mut f = vec![0; n];
        for (pos, &i) in order.iter().enumerate() {
            f[i] = pos % inner_folds;
        }
        f
    };

    let scores: Vec<f64> = lambda_grid
        .par_iter()
        .map(|&lambda| {
            let mut sse = 0.0;
            for fold in 0..inner_folds {
                let (train, test): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| fold_of[i] != fold);
                let x: Vec<Vec<f64>> = train.iter().map(|&i| design[i].clone()).collect();
                let y: Vec<f64> = train.iter().map(|&i| labels[i]).collect();
                match fit_ridge(&x, &y, lambda) {
                    Ok(model) => sse += test.iter().map(|&i| (model.predict(&design[i]) - labels[i]).powi(2)).sum::<f64>(),
                    Err(_) => return f64::INFINITY,
                }
            }
            (sse / n as f64).sqrt()
        })
        .collect();

    let mut best: Option<(f64, f64)> = None;
    for (&lambda, &score) in lambda_grid.iter().zip(&scores) {
        if !score.is_finite() {
            continue;
        }
        best = match best {
            Some((bl, bs)) if score > bs || (score == bs && lambda >= bl) => Some((bl, bs)),
            _ => Some((lambda, score)),
        };
    }
    best.map(|(l, _)| l).ok_or(BaselineError::Singular(0.0))
}

/// Selects λ by inner CV on the table and refits on all of it.
pub fn fit_table(
    table: &FeatureTable,
    features: &[RidgeFeature],
    lambda_grid: &[f64],
    inner_folds: usize,
    transform: LabelTransform,
    seed: u64,
) -> Result<RidgeModel, BaselineError> {
    let mut design = Vec::with_capacity(table.len());
    let mut labels = Vec::with_capacity(table.len());
    for row in table.rows() {
        let label = row.label.ok_or_else(|| BaselineError::MissingLabel(row.cell_id.clone()))?;
        design.push(features.iter().map(|f| f.value(row)).collect::<Vec<f64>>());
        labels.push(transform.forward(label));
    }
    let lambda = select_lambda(&design, &labels, lambda_grid, inner_folds, seed)?;
    let mut model = fit_ridge(&design, &labels, lambda)?;
    model.features = features.to_vec();
    model.label_transform = transform;
    Ok(model)
}
