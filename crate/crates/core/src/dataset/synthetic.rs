//! Forward sampling of the two-level generative model.
//!
//! For group `j` a group feature `g_j` is drawn uniformly from `g_range`,
//! then `θ_j ~ N(γᵀ[1, g_j], diag(σ²))`. Each cell draws individual features
//! from Gaussians whose means move linearly with `g_j` and gets the label
//! `y = θ_jᵀ[1, x] + N(0, σ_y²)` in the transformed label space.

use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::{DatasetError, FeatureRow, FeatureTable, LabelTransform};
use crate::rng::rng_from;

/// `x ~ N(mean_intercept + mean_slope * g, sd²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureDistribution {
    pub mean_intercept: f64,
    pub mean_slope: f64,
    pub sd: f64,
}

impl FeatureDistribution {
    pub fn mean_at(&self, g: f64) -> f64 {
        self.mean_intercept + self.mean_slope * g
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_groups: usize,
    pub cells_per_group: usize,
    pub g_range: [f64; 2],
    /// Row `k` holds `(intercept, slope on g)` for coefficient `k`.
    pub gamma: [[f64; 2]; 4],
    pub sigma: [f64; 4],
    pub sigma_y: f64,
    pub features: [FeatureDistribution; 3],
    /// Per-cell spread of `g` around the group value; 0 gives identical `g` within a group.
    pub g_jitter: f64,
    pub label_transform: LabelTransform,
}

impl Default for SyntheticConfig {
    // Roughly log10-day lifetimes between 12 and 50 days over 3C..6C.
    fn default() -> Self {
        Self {
            n_groups: 8,
            cells_per_group: 15,
            g_range: [3.0, 6.0],
            gamma: [[-1.12, 0.087], [-0.45, 0.05], [-0.05, 0.0], [1.0, 0.0]],
            sigma: [0.05, 0.02, 0.01, 0.05],
            sigma_y: 0.04,
            features: [
                FeatureDistribution { mean_intercept: -5.5, mean_slope: 0.3, sd: 0.3 },
                FeatureDistribution { mean_intercept: -2.6, mean_slope: 0.15, sd: 0.2 },
                FeatureDistribution { mean_intercept: 1.075, mean_slope: -0.002, sd: 0.005 },
            ],
            g_jitter: 0.0,
            label_transform: LabelTransform::Log10,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<(), DatasetError> {
        let bad = |field, reason: String| Err(DatasetError::InvalidConfig { field, reason });
        if self.n_groups == 0 {
            return bad("n_groups", "must be at least 1".into());
        }
        if self.cells_per_group == 0 {
            return bad("cells_per_group", "must be at least 1".into());
        }
        if !(self.g_range[0] <= self.g_range[1]) || !self.g_range.iter().all(|g| g.is_finite()) {
            return bad("g_range", format!("{:?} is not an ordered finite interval", self.g_range));
        }
        if let Some(s) = self.sigma.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return bad("sigma", format!("scale {s} is not positive"));
        }
        if !(self.sigma_y > 0.0 && self.sigma_y.is_finite()) {
            return bad("sigma_y", format!("scale {} is not positive", self.sigma_y));
        }
        if let Some(f) = self.features.iter().find(|f| !(f.sd > 0.0 && f.sd.is_finite())) {
            return bad("features", format!("sd {} is not positive", f.sd));
        }
        if !(self.g_jitter >= 0.0) {
            return bad("g_jitter", format!("{} is negative", self.g_jitter));
        }
        Ok(())
    }
}

/// Parameters that generated a synthetic fleet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub gamma: [[f64; 2]; 4],
    pub sigma: [f64; 4],
    pub sigma_y: f64,
    pub theta_by_group: BTreeMap<usize, [f64; 4]>,
    pub group_g_values: BTreeMap<usize, f64>,
    pub membership: BTreeMap<String, usize>,
    /// Noise-free labels in transformed space, `θ_jᵀ[1, x]`.
    pub mean_labels: BTreeMap<String, f64>,
    /// Labels in transformed space including noise.
    pub transformed_labels: BTreeMap<String, f64>,
}

fn normal(mean: f64, sd: f64) -> Normal<f64> {
    Normal::new(mean, sd).expect("validated scale")
}

/// Samples a fleet. The same `(config, seed)` always yields bit-identical output.
pub fn generate_synthetic(config: &SyntheticConfig, seed: u64) -> Result<(FeatureTable, SyntheticTruth), DatasetError> {
    config.validate()?;
    let mut rng = rng_from(seed, &[0x5359_4e54]);
    let g_dist = Uniform::new_inclusive(config.g_range[0], config.g_range[1]).expect("validated range");

    let mut truth = SyntheticTruth {
        gamma: config.gamma,
        sigma: config.sigma,
        sigma_y: config.sigma_y,
        theta_by_group: BTreeMap::new(),
        group_g_values: BTreeMap::new(),
        membership: BTreeMap::new(),
        mean_labels: BTreeMap::new(),
        transformed_labels: BTreeMap::new(),
    };
    let mut rows = Vec::with_capacity(config.n_groups * config.cells_per_group);
    let noise = normal(0.0, config.sigma_y);

    for j in 0..config.n_groups {
        let g_j = g_dist.sample(&mut rng);
        let theta: [f64; 4] = std::array::from_fn(|k| {
            let [a, b] = config.gamma[k];
            normal(a + b * g_j, config.sigma[k]).sample(&mut rng)
        });
        truth.theta_by_group.insert(j, theta);
        truth.group_g_values.insert(j, g_j);

        for i in 0..config.cells_per_group {
            let cell_id = format!("syn-{j:02}-{i:04}");
            let g = if config.g_jitter > 0.0 { g_j + normal(0.0, config.g_jitter).sample(&mut rng) } else { g_j };
            let x: [f64; 3] = std::array::from_fn(|k| {
                let f = &config.features[k];
                normal(f.mean_at(g_j), f.sd).sample(&mut rng)
            });
            let mean = theta[0] + theta[1] * x[0] + theta[2] * x[1] + theta[3] * x[2];
            let y = mean + noise.sample(&mut rng);
            let label = config.label_transform.inverse(y);
            if !label.is_finite() {
                return Err(DatasetError::InvalidConfig {
                    field: "gamma",
                    reason: format!("label {y} overflows the {:?} back-transform", config.label_transform),
                });
            }
            truth.membership.insert(cell_id.clone(), j);
            truth.mean_labels.insert(cell_id.clone(), mean);
            truth.transformed_labels.insert(cell_id.clone(), y);
            rows.push(FeatureRow { cell_id, g, f1: x[0], f2: x[1], f3: x[2], label: Some(label) });
        }
    }
    let table = FeatureTable::new(rows, config.label_transform)?;
    Ok((table, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{mean, sample_variance};

    #[test]
    fn degenerate_noise_gives_deterministic_labels() {
        let config = SyntheticConfig {
            sigma: [1e-12; 4],
            sigma_y: 1e-12,
            label_transform: LabelTransform::Identity,
            ..SyntheticConfig::default()
        };
        let (table, truth) = generate_synthetic(&config, 3).unwrap();
        for row in table.rows() {
            let j = truth.membership[&row.cell_id];
            let g = truth.group_g_values[&j];
            let theta: Vec<f64> = config.gamma.iter().map(|[a, b]| a + b * g).collect();
            let expected = theta[0] + theta[1] * row.f1 + theta[2] * row.f2 + theta[3] * row.f3;
            assert!((row.label.unwrap() - expected).abs() < 1e-6);
        }
    }

    #[test]
    fn same_seed_same_table() {
        let config = SyntheticConfig::default();
        let a = generate_synthetic(&config, 7).unwrap();
        let b = generate_synthetic(&config, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&config, 8).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn rejects_bad_scales() {
        let mut config = SyntheticConfig::default();
        config.sigma[2] = 0.0;
        assert!(generate_synthetic(&config, 1).is_err());
        let config = SyntheticConfig { sigma_y: -1.0, ..SyntheticConfig::default() };
        assert!(generate_synthetic(&config, 1).is_err());
        let config = SyntheticConfig { n_groups: 0, ..SyntheticConfig::default() };
        assert!(generate_synthetic(&config, 1).is_err());
    }

    #[test]
    fn group_label_variance_matches_analytic() {
        let config = SyntheticConfig {
            n_groups: 1,
            cells_per_group: 10_000,
            label_transform: LabelTransform::Identity,
            ..SyntheticConfig::default()
        };
        let (table, truth) = generate_synthetic(&config, 11).unwrap();
        let theta = truth.theta_by_group[&0];
        let analytic = (0..3).map(|k| theta[k + 1].powi(2) * config.features[k].sd.powi(2)).sum::<f64>()
            + config.sigma_y.powi(2);
        let labels: Vec<f64> = table.rows().iter().map(|r| r.label.unwrap()).collect();
        let empirical = sample_variance(&labels).unwrap();
        assert!((empirical / analytic - 1.0).abs() < 0.05, "empirical {empirical} analytic {analytic}");
    }

    #[test]
    fn conditional_residuals_are_standard_normal() {
        let config = SyntheticConfig { n_groups: 2, cells_per_group: 5_000, ..SyntheticConfig::default() };
        let (_, truth) = generate_synthetic(&config, 5).unwrap();
        let z: Vec<f64> = truth
            .transformed_labels
            .iter()
            .map(|(id, y)| (y - truth.mean_labels[id]) / config.sigma_y)
            .collect();
        let n = z.len() as f64;
        assert!(mean(&z).abs() < 4.0 / n.sqrt());
        assert!((sample_variance(&z).unwrap() - 1.0).abs() < 0.1);
    }
}
