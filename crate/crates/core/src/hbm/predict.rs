//! Posterior predictive distribution for one cell: a Gaussian mixture with
//! one component per posterior draw.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{prior_mean, HbmError, HbmPosterior};
use crate::dataset::LabelTransform;
use crate::features::FeatureVector;
use crate::stats::std_normal_cdf;

/// Which level-2 distribution supplies the group coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GroupTarget {
    /// A group present in the fitted model.
    Fitted(usize),
    /// A group with no training cells, located at usage feature `g`.
    New { g: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    /// Mixture mean on the transformed label scale.
    pub mean: f64,
    pub variance: f64,
    /// Inverse transform of `mean`.
    pub point_estimate_days: f64,
    pub label_transform: LabelTransform,
    component_means: Vec<f64>,
    component_sds: Vec<f64>,
}

impl PredictiveDistribution {
    pub fn from_components(means: Vec<f64>, variances: &[f64], label_transform: LabelTransform) -> Self {
        let s = means.len() as f64;
        let mean = means.iter().sum::<f64>() / s;
        let second = means.iter().zip(variances).map(|(m, v)| v + m * m).sum::<f64>() / s;
        Self {
            mean,
            variance: (second - mean * mean).max(0.0),
            point_estimate_days: label_transform.inverse(mean),
            label_transform,
            component_sds: variances.iter().map(|v| v.sqrt()).collect(),
            component_means: means,
        }
    }

    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn cdf(&self, y: f64) -> f64 {
        let total: f64 = self
            .component_means
            .iter()
            .zip(&self.component_sds)
            .map(|(m, s)| if *s > 0.0 { std_normal_cdf((y - m) / s) } else if y >= *m { 1.0 } else { 0.0 })
            .sum();
        total / self.component_means.len() as f64
    }

    pub fn quantile(&self, q: f64) -> f64 {
        let sd = self.sd().max(1e-12);
        let mut lo = self.mean - 10.0 * sd;
        let mut hi = self.mean + 10.0 * sd;
        while self.cdf(lo) > q {
            lo -= 10.0 * sd;
        }
        while self.cdf(hi) < q {
            hi += 10.0 * sd;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < q {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-12 * (1.0 + mid.abs()) {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// Central interval with the given coverage on the transformed scale.
    pub fn interval(&self, level: f64) -> (f64, f64) {
        let tail = 0.5 * (1.0 - level);
        (self.quantile(tail), self.quantile(1.0 - tail))
    }

    /// Central interval mapped back to days.
    pub fn interval_days(&self, level: f64) -> (f64, f64) {
        let (lo, hi) = self.interval(level);
        (self.label_transform.inverse(lo), self.label_transform.inverse(hi))
    }
}

/// Predictive distribution for a standardized design row `[1, z₁, …]`.
pub fn predict_design(row: &DVector<f64>, group: GroupTarget, posterior: &HbmPosterior) -> Result<PredictiveDistribution, HbmError> {
    if row.len() != posterior.p {
        return Err(HbmError::Dimension(format!("design row of length {} for {} coefficients", row.len(), posterior.p)));
    }
    let n = posterior.n_samples();
    let mut means = Vec::with_capacity(n);
    let mut vars = Vec::with_capacity(n);
    match group {
        GroupTarget::Fitted(j) => {
            let pos = posterior.group_position(j).ok_or(HbmError::UnseenGroup(j))?;
            let conditionals = posterior
                .theta_conditionals
                .get(pos)
                .ok_or_else(|| HbmError::Format("group conditionals were not rebuilt".into()))?;
            for (c, sigma_y) in conditionals.iter().zip(&posterior.sigma_y_samples) {
                means.push(row.dot(&c.mean));
                vars.push((c.cov.clone() * row).dot(row) + sigma_y * sigma_y);
            }
        }
        GroupTarget::New { g } => {
            let g_vec = DVector::from_vec(vec![1.0, g]);
            for s in 0..n {
                let m = prior_mean(&posterior.gamma(s), &g_vec);
                let sigma = &posterior.sigma_samples[s];
                let sigma_y = posterior.sigma_y_samples[s];
                means.push(row.dot(&m));
                vars.push(row.iter().zip(sigma).map(|(x, s)| (x * s).powi(2)).sum::<f64>() + sigma_y * sigma_y);
            }
        }
    }
    Ok(PredictiveDistribution::from_components(means, &vars, posterior.label_transform))
}

/// Predictive distribution for a cell with raw features `x`. For
/// [`GroupTarget::New`] the level-2 prior at the given `g` is used.
pub fn predict(x: &FeatureVector, group: GroupTarget, posterior: &HbmPosterior) -> Result<PredictiveDistribution, HbmError> {
    let z = posterior.standardizer.apply(&[x.f1, x.f2, x.f3]);
    let row = DVector::from_iterator(z.len() + 1, std::iter::once(1.0).chain(z));
    predict_design(&row, group, posterior)
}
