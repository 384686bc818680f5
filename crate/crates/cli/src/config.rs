//! Layered configuration: defaults, then the JSON config file, then flags.

use std::path::Path;

use anyhow::Context;
use lifepred::baseline::{default_lambda_grid, RidgeFeature};
use lifepred::dataset::{LabelTransform, SyntheticConfig};
use lifepred::eval::CvConfig;
use lifepred::{ClusterConfig, GridConfig, McmcConfig, ModelConfig};
use serde::{Deserialize, Serialize};

use crate::args::{ClusterFlags, HbmFlags};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    pub grid: GridConfig,
    pub log_clamp: f64,
}

impl Default for FeatureSection {
    fn default() -> Self {
        Self { grid: GridConfig::default(), log_clamp: 1e-12 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HbmSection {
    pub model: ModelConfig,
    pub mcmc: McmcConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub features: Vec<RidgeFeature>,
    pub lambda_grid: Vec<f64>,
    pub inner_folds: usize,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self { features: RidgeFeature::THREE.to_vec(), lambda_grid: default_lambda_grid(), inner_folds: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub models: Vec<String>,
    pub cv: CvConfig,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { models: vec!["hbm".into(), "ridge3".into(), "ridge4".into()], cv: CvConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSection {
    pub level: f64,
}

impl Default for PredictSection {
    fn default() -> Self {
        Self { level: 0.9 }
    }
}

/// Stage configs for the whole pipeline.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Space labels are regressed in; applies to fit, baseline and evaluate.
    pub label_transform: LabelTransform,
    pub synth: SyntheticConfig,
    pub features: FeatureSection,
    pub clustering: ClusterConfig,
    pub hbm: HbmSection,
    pub baseline: BaselineSection,
    pub eval: EvalSection,
    pub predict: PredictSection,
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("config: cannot read {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("config: {} is not a valid pipeline config", path.display()))
    }

    pub fn apply_cluster(&mut self, k: Option<usize>, flags: &ClusterFlags) {
        let c = &mut self.clustering;
        set(&mut c.k, k);
        set(&mut c.min_size, flags.min_size);
        set(&mut c.max_size, flags.max_size);
        set(&mut c.restarts, flags.restarts);
        set(&mut c.max_iter, flags.max_iter);
    }

    pub fn apply_hbm(&mut self, flags: &HbmFlags, transform: Option<LabelTransform>) {
        let m = &mut self.hbm.mcmc;
        set(&mut m.chains, flags.chains);
        set(&mut m.warmup, flags.warmup);
        set(&mut m.samples, flags.samples);
        set(&mut m.thin, flags.thin);
        set(&mut m.scheme, flags.scheme);
        let model = &mut self.hbm.model;
        set(&mut model.sigma_y, flags.sigma_y);
        if flags.sigma_y_prior.is_some() {
            model.sigma_y_prior = flags.sigma_y_prior;
        }
        set(&mut model.hyper_prior_scale, flags.hyper_prior_scale);
        self.apply_transform(transform);
    }

    pub fn apply_transform(&mut self, transform: Option<LabelTransform>) {
        set(&mut self.label_transform, transform);
        self.hbm.model.label_transform = self.label_transform;
    }
}

pub fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}
