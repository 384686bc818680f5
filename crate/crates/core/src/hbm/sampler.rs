//! Adaptive random-walk Metropolis over the hyper-parameters.
//!
//! The state is `φ = [vec(γ), ln σ, (ln σ_y)]`. The target is
//! `Σ_j log p(y_j | γ, σ, σ_y) + log N(γ; 0, s₀² I) + log p(σ) + log p(σ_y)`
//! plus the log-scale Jacobians.
//!
//! Warmup has two stages. The first quarter runs component-wise updates
//! whose per-coordinate step sizes are tuned towards 44% acceptance. The
//! rest runs joint Gaussian proposals whose covariance is re-estimated from
//! the draws of the previous window (windows double in length) and whose
//! global scale is tuned towards 23.4% acceptance. Sampling freezes the
//! proposal; each retained draw is `thin` joint steps apart.
//!
//! By default the walk runs only over the log scales, with `γ` integrated
//! out in closed form, and `γ` is then drawn from its exact Gaussian
//! conditional at each retained state.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::diagnostics::{effective_sample_size, split_rhat};
use super::collapsed::gamma_given_scales;
use super::model::{marginal_log_likelihood_stats, theta_conditional_stats, CoefGaussian, SufficientStats};
use super::{GroupData, HbmError, ModelConfig, ScalePrior};
use crate::dataset::LabelTransform;
use crate::rng::{rng_from, Rng};
use crate::stats::Standardizer;

const LN_2PI: f64 = 1.837_877_066_409_345_3;
const COORD_TARGET: f64 = 0.44;
const JOINT_TARGET: f64 = 0.234;
const MIN_ACCEPTANCE: f64 = 0.01;
const FIRST_WINDOW: usize = 50;

/// How `γ` is updated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerScheme {
    /// Random walk on the log scales with `γ` integrated out, then an exact
    /// Gaussian draw of `γ` for every retained state.
    #[default]
    Collapsed,
    /// Random walk on `γ` and the log scales jointly.
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub scheme: SamplerScheme,
    pub chains: usize,
    pub warmup: usize,
    pub samples: usize,
    /// Joint proposals between retained draws.
    pub thin: usize,
    /// Starting per-coordinate step size on the unconstrained scale.
    pub initial_step: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self { scheme: SamplerScheme::Collapsed, chains: 4, warmup: 1000, samples: 1000, thin: 10, initial_step: 0.1 }
    }
}

impl McmcConfig {
    fn validate(&self) -> Result<(), HbmError> {
        if self.chains == 0 || self.warmup == 0 || self.samples == 0 || self.thin == 0 {
            return Err(HbmError::InvalidConfig(format!(
                "chains, warmup, samples and thin must all be at least 1 (got {}, {}, {}, {})",
                self.chains, self.warmup, self.samples, self.thin
            )));
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return Err(HbmError::InvalidConfig(format!("initial_step {} is not positive", self.initial_step)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub parameter_names: Vec<String>,
    pub rhat: Vec<f64>,
    pub ess: Vec<f64>,
    /// Acceptance rate of the joint proposals during sampling, per chain.
    pub acceptance: Vec<f64>,
}

impl Diagnostics {
    pub fn max_rhat(&self) -> f64 {
        self.rhat.iter().copied().fold(f64::NAN, f64::max)
    }

    pub fn min_ess(&self) -> f64 {
        self.ess.iter().copied().fold(f64::NAN, f64::min)
    }
}

/// Per-group data kept with a fitted posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub index: usize,
    pub g_vec: DVector<f64>,
    pub stats: SufficientStats,
}

/// Draws of the hyper-parameters plus, per group and draw, the conjugate
/// Gaussian over that group's coefficients. Draws are stored chain-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HbmPosterior {
    /// Number of group coefficients (intercept included).
    pub p: usize,
    pub n_chains: usize,
    pub draws_per_chain: usize,
    /// Each entry is γ (`p × 2`) flattened row-major.
    pub gamma_samples: Vec<Vec<f64>>,
    pub sigma_samples: Vec<Vec<f64>>,
    pub sigma_y_samples: Vec<f64>,
    pub log_density: Vec<f64>,
    pub diagnostics: Diagnostics,
    pub groups: Vec<GroupSummary>,
    /// Applied to raw individual features before prediction.
    pub standardizer: Standardizer,
    pub label_transform: LabelTransform,
    #[serde(skip)]
    pub theta_conditionals: Vec<Vec<CoefGaussian>>,
}

impl HbmPosterior {
    pub fn n_samples(&self) -> usize {
        self.gamma_samples.len()
    }

    pub fn gamma(&self, s: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.p, 2, &self.gamma_samples[s])
    }

    pub fn group_position(&self, index: usize) -> Option<usize> {
        self.groups.iter().position(|g| g.index == index)
    }

    /// Draws of one γ entry, split by chain.
    pub fn gamma_chains(&self, k: usize, c: usize) -> Vec<Vec<f64>> {
        self.gamma_samples
            .chunks(self.draws_per_chain)
            .map(|chunk| chunk.iter().map(|g| g[2 * k + c]).collect())
            .collect()
    }

    /// Recomputes `theta_conditionals` from the stored draws and group statistics.
    pub fn rebuild_conditionals(&mut self) -> Result<(), HbmError> {
        let conditionals: Result<Vec<Vec<CoefGaussian>>, HbmError> = self
            .groups
            .par_iter()
            .map(|g| {
                (0..self.n_samples())
                    .map(|s| {
                        theta_conditional_stats(&g.stats, &g.g_vec, &self.gamma(s), &self.sigma_samples[s], self.sigma_y_samples[s])
                    })
                    .collect()
            })
            .collect();
        self.theta_conditionals = conditionals?;
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string(self)
    }

    pub fn from_json(text: &str) -> Result<Self, HbmError> {
        let mut post: HbmPosterior = serde_json::from_str(text).map_err(|e| HbmError::Format(e.to_string()))?;
        post.rebuild_conditionals()?;
        Ok(post)
    }
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    p: usize,
    sample_sigma: bool,
    sample_sigma_y: bool,
}

impl Layout {
    fn dim(&self) -> usize {
        2 * self.p + if self.sample_sigma { self.p } else { 0 } + usize::from(self.sample_sigma_y)
    }

    fn names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dim() + self.p);
        for k in 0..self.p {
            names.push(format!("gamma[{k},0]"));
            names.push(format!("gamma[{k},g]"));
        }
        if self.sample_sigma {
            names.extend((0..self.p).map(|k| format!("sigma[{k}]")));
        }
        if self.sample_sigma_y {
            names.push("sigma_y".into());
        }
        names
    }
}

struct Target<'a> {
    groups: &'a [GroupData],
    config: &'a ModelConfig,
    layout: Layout,
}

fn half_normal_ln_pdf(x: f64, scale: f64) -> f64 {
    0.5 * (2.0 / std::f64::consts::PI).ln() - scale.ln() - 0.5 * (x / scale).powi(2)
}

impl Target<'_> {
    fn unpack(&self, phi: &[f64]) -> (DMatrix<f64>, Vec<f64>, f64) {
        let p = self.layout.p;
        let gamma = DMatrix::from_row_slice(p, 2, &phi[..2 * p]);
        let mut at = 2 * p;
        let sigma = match &self.config.scale_prior {
            ScalePrior::Fixed { values } => values.clone(),
            ScalePrior::HalfNormal { .. } => {
                at += p;
                phi[2 * p..2 * p + p].iter().map(|l| l.exp()).collect()
            }
        };
        let sigma_y = if self.layout.sample_sigma_y { phi[at].exp() } else { self.config.sigma_y };
        (gamma, sigma, sigma_y)
    }

    /// Prior on the log-scale coordinates `ψ = φ[2p..]`, Jacobian included.
    fn scale_log_prior(&self, psi: &[f64]) -> f64 {
        let mut lp = 0.0;
        let mut at = 0;
        if let ScalePrior::HalfNormal { scale } = self.config.scale_prior {
            lp += psi[..self.layout.p].iter().map(|l| half_normal_ln_pdf(l.exp(), scale) + l).sum::<f64>();
            at = self.layout.p;
        }
        if let Some(scale) = self.config.sigma_y_prior {
            lp += half_normal_ln_pdf(psi[at].exp(), scale) + psi[at];
        }
        lp
    }

    fn log_density(&self, phi: &[f64]) -> f64 {
        if phi.iter().any(|v| !v.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let p = self.layout.p;
        let (gamma, sigma, sigma_y) = self.unpack(phi);
        let s0 = self.config.hyper_prior_scale;
        let mut lp: f64 = phi[..2 * p].iter().map(|g| -0.5 * (LN_2PI + 2.0 * s0.ln() + (g / s0).powi(2))).sum();
        lp += self.scale_log_prior(&phi[2 * p..]);
        for g in self.groups {
            match marginal_log_likelihood_stats(g.stats(), g.g_vec(), &gamma, &sigma, sigma_y) {
                Ok(ll) => lp += ll,
                Err(_) => return f64::NEG_INFINITY,
            }
        }
        if lp.is_finite() {
            lp
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// MAP of γ with σ → 0: ridge regression of the labels on `x ⊗ g`.
fn pooled_gamma(groups: &[GroupData], p: usize, sigma_y: f64, prior_scale: f64) -> DVector<f64> {
    let d = 2 * p;
    let mut ztz = DMatrix::<f64>::identity(d, d) / (prior_scale * prior_scale);
    let mut zty = DVector::<f64>::zeros(d);
    let w = 1.0 / (sigma_y * sigma_y);
    for g in groups {
        let st = g.stats();
        let gv = g.g_vec();
        for k in 0..p {
            for c in 0..2 {
                zty[2 * k + c] += w * st.xty[k] * gv[c];
                for l in 0..p {
                    for e in 0..2 {
                        ztz[(2 * k + c, 2 * l + e)] += w * st.gram[(k, l)] * gv[c] * gv[e];
                    }
                }
            }
        }
    }
    ztz.cholesky().map(|c| c.solve(&zty)).unwrap_or_else(|| DVector::zeros(d))
}

fn initial_state(target: &Target, rng: &mut Rng) -> Vec<f64> {
    let layout = target.layout;
    let cfg = target.config;
    let gamma0 = pooled_gamma(target.groups, layout.p, cfg.sigma_y, cfg.hyper_prior_scale);
    let mut phi: Vec<f64> = gamma0
        .iter()
        .map(|g| {
            let z: f64 = StandardNormal.sample(rng);
            g + z * (0.1 * g.abs() + 0.05)
        })
        .collect();
    if layout.sample_sigma {
        for _ in 0..layout.p {
            let z: f64 = StandardNormal.sample(rng);
            phi.push(0.3f64.ln() + 0.5 * z);
        }
    }
    if layout.sample_sigma_y {
        let z: f64 = StandardNormal.sample(rng);
        phi.push(cfg.sigma_y.ln() + 0.3 * z);
    }
    phi
}

struct ChainOutput {
    draws: Vec<Vec<f64>>,
    log_density: Vec<f64>,
    acceptance: f64,
}

fn empirical_proposal(draws: &[Vec<f64>], d: usize) -> Option<DMatrix<f64>> {
    let n = draws.len();
    if n < 2 * d {
        return None;
    }
    let mean = draws.iter().fold(DVector::zeros(d), |acc, x| acc + DVector::from_column_slice(x)) / n as f64;
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for x in draws {
        let dx = DVector::from_column_slice(x) - &mean;
        cov += &dx * dx.transpose();
    }
    cov /= (n - 1) as f64;
    // shrink towards the diagonal
    let w = n as f64 / (n as f64 + 5.0);
    let mut reg = &cov * w;
    for i in 0..d {
        reg[(i, i)] += (1.0 - w) * cov[(i, i)] + 1e-12;
    }
    reg *= 2.38 * 2.38 / d as f64;
    reg.cholesky().map(|c| c.unpack())
}

/// Adaptive random-walk Metropolis on `log_p`, starting from `init`.
/// `record` is called with the state after every retained draw.
fn adaptive_rwm(
    log_p: &dyn Fn(&[f64]) -> f64,
    init: Vec<f64>,
    mcmc: &McmcConfig,
    rng: &mut Rng,
    record: &mut dyn FnMut(&[f64], &mut Rng),
) -> f64 {
    let d = init.len();
    let mut phi = init;
    if d == 0 {
        for _ in 0..mcmc.samples {
            record(&phi, rng);
        }
        return 1.0;
    }
    let mut lp = log_p(&phi);

    let mut steps = vec![mcmc.initial_step; d];
    let coord_iters = (mcmc.warmup / 4).max(1).min(mcmc.warmup);
    let mut window: Vec<Vec<f64>> = Vec::new();
    for it in 0..coord_iters {
        let rate = 1.0 / ((it + 1) as f64).powf(0.6);
        for i in 0..d {
            let old = phi[i];
            let z: f64 = StandardNormal.sample(rng);
            phi[i] = old + steps[i] * z;
            let lp_new = log_p(&phi);
            let accept_prob = if lp_new.is_finite() { (lp_new - lp).exp().min(1.0) } else { 0.0 };
            if rng.random::<f64>() < accept_prob {
                lp = lp_new;
            } else {
                phi[i] = old;
            }
            steps[i] = (steps[i].ln() + rate * (accept_prob - COORD_TARGET)).exp().clamp(1e-8, 1e3);
        }
        if it >= coord_iters / 2 {
            window.push(phi.clone());
        }
    }

    let fallback = DMatrix::from_diagonal(&DVector::from_vec(steps.clone()));
    let mut chol = empirical_proposal(&window, d).unwrap_or_else(|| fallback.clone());
    let mut log_scale = 0.0f64;
    let mut proposal = vec![0.0; d];
    let mut joint_step = |phi: &mut Vec<f64>, lp: &mut f64, chol: &DMatrix<f64>, log_scale: f64, rng: &mut Rng| -> f64 {
        let z = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let delta = chol * z * log_scale.exp();
        for i in 0..d {
            proposal[i] = phi[i] + delta[i];
        }
        let lp_new = log_p(&proposal);
        let accept_prob = if lp_new.is_finite() { (lp_new - *lp).exp().min(1.0) } else { 0.0 };
        if rng.random::<f64>() < accept_prob {
            phi.copy_from_slice(&proposal);
            *lp = lp_new;
        }
        accept_prob
    };

    let mut remaining = mcmc.warmup - coord_iters;
    let mut window_len = FIRST_WINDOW;
    while remaining > 0 {
        let len = if remaining < 2 * window_len { remaining } else { window_len };
        window.clear();
        let mut t = 0usize;
        for _ in 0..len {
            for _ in 0..mcmc.thin {
                let a = joint_step(&mut phi, &mut lp, &chol, log_scale, rng);
                t += 1;
                log_scale += (a - JOINT_TARGET) / (t as f64).powf(0.6);
            }
            window.push(phi.clone());
        }
        remaining -= len;
        window_len *= 2;
        if remaining > 0 {
            if let Some(c) = empirical_proposal(&window, d) {
                chol = c;
                log_scale = 0.0;
            }
        }
    }

    let mut accepted = 0.0;
    for _ in 0..mcmc.samples {
        for _ in 0..mcmc.thin {
            accepted += joint_step(&mut phi, &mut lp, &chol, log_scale, rng);
        }
        record(&phi, rng);
    }
    accepted / (mcmc.samples * mcmc.thin) as f64
}

fn restart_until_finite(target: &dyn Fn(&[f64]) -> f64, mut draw: impl FnMut() -> Vec<f64>) -> Vec<f64> {
    let mut phi = draw();
    for _ in 0..100 {
        if target(&phi).is_finite() {
            break;
        }
        phi = draw();
    }
    phi
}

fn run_joint_chain(target: &Target, mcmc: &McmcConfig, mut rng: Rng) -> ChainOutput {
    let log_p = |phi: &[f64]| target.log_density(phi);
    let init = restart_until_finite(&log_p, || initial_state(target, &mut rng));
    let mut draws = Vec::with_capacity(mcmc.samples);
    let mut log_density = Vec::with_capacity(mcmc.samples);
    let acceptance = adaptive_rwm(&log_p, init, mcmc, &mut rng, &mut |phi, _| {
        draws.push(phi.to_vec());
        log_density.push(target.log_density(phi));
    });
    ChainOutput { draws, log_density, acceptance }
}

fn run_collapsed_chain(target: &Target, mcmc: &McmcConfig, mut rng: Rng) -> ChainOutput {
    let n_gamma = 2 * target.layout.p;
    let stats: Vec<(&SufficientStats, &DVector<f64>)> = target.groups.iter().map(|g| (g.stats(), g.g_vec())).collect();
    let gamma_posterior = |psi: &[f64]| {
        let mut phi = vec![0.0; n_gamma];
        phi.extend_from_slice(psi);
        let (_, sigma, sigma_y) = target.unpack(&phi);
        gamma_given_scales(&stats, &sigma, sigma_y, target.config.hyper_prior_scale).ok()
    };
    let log_p = |psi: &[f64]| {
        if psi.iter().any(|v| !v.is_finite()) {
            return f64::NEG_INFINITY;
        }
        match gamma_posterior(psi) {
            Some(post) => {
                let lp = target.scale_log_prior(psi) + post.log_evidence;
                if lp.is_finite() {
                    lp
                } else {
                    f64::NEG_INFINITY
                }
            }
            None => f64::NEG_INFINITY,
        }
    };
    let init = restart_until_finite(&log_p, || initial_state(target, &mut rng).split_off(n_gamma));
    let mut draws = Vec::with_capacity(mcmc.samples);
    let mut log_density = Vec::with_capacity(mcmc.samples);
    let acceptance = adaptive_rwm(&log_p, init, mcmc, &mut rng, &mut |psi, rng| {
        let post = gamma_posterior(psi).expect("accepted states have a proper conditional");
        let z = DVector::from_fn(n_gamma, |_, _| StandardNormal.sample(rng));
        let mut phi: Vec<f64> = post.draw(z).iter().copied().collect();
        phi.extend_from_slice(psi);
        log_density.push(target.log_density(&phi));
        draws.push(phi);
    });
    ChainOutput { draws, log_density, acceptance }
}

fn validate_groups(groups: &[GroupData], config: &ModelConfig) -> Result<usize, HbmError> {
    let first = groups.first().ok_or(HbmError::NoGroups)?;
    let p = first.dim();
    if let Some(g) = groups.iter().find(|g| g.dim() != p) {
        return Err(HbmError::Dimension(format!("group {} has {} coefficients, group {} has {p}", g.index, g.dim(), first.index)));
    }
    let mut seen = std::collections::BTreeSet::new();
    if let Some(g) = groups.iter().find(|g| !seen.insert(g.index)) {
        return Err(HbmError::Dimension(format!("duplicate group index {}", g.index)));
    }
    config.validate(p)?;
    Ok(p)
}

/// Samples the posterior over `(γ, σ, σ_y)` and attaches per-group
/// conditionals for every draw.
pub fn sample_posterior(groups: &[GroupData], config: &ModelConfig, mcmc: &McmcConfig, seed: u64) -> Result<HbmPosterior, HbmError> {
    let p = validate_groups(groups, config)?;
    mcmc.validate()?;
    let layout = Layout {
        p,
        sample_sigma: matches!(config.scale_prior, ScalePrior::HalfNormal { .. }),
        sample_sigma_y: config.sigma_y_prior.is_some(),
    };
    let target = Target { groups, config, layout };

    let outputs: Vec<ChainOutput> = (0..mcmc.chains)
        .into_par_iter()
        .map(|c| {
            let rng = rng_from(seed, &[0x4d434d43, c as u64]);
            match mcmc.scheme {
                SamplerScheme::Collapsed => run_collapsed_chain(&target, mcmc, rng),
                SamplerScheme::Joint => run_joint_chain(&target, mcmc, rng),
            }
        })
        .collect();

    let acceptance: Vec<f64> = outputs.iter().map(|o| o.acceptance).collect();
    if acceptance.iter().all(|&a| a < MIN_ACCEPTANCE) {
        return Err(HbmError::Divergent { acceptance });
    }

    let mut gamma_samples = Vec::new();
    let mut sigma_samples = Vec::new();
    let mut sigma_y_samples = Vec::new();
    let mut log_density = Vec::new();
    for out in &outputs {
        for (phi, lp) in out.draws.iter().zip(&out.log_density) {
            let (gamma, sigma, sigma_y) = target.unpack(phi);
            gamma_samples.push(gamma.transpose().as_slice().to_vec());
            sigma_samples.push(sigma);
            sigma_y_samples.push(sigma_y);
            log_density.push(*lp);
        }
    }

    let names = layout.names();
    let mut rhat = Vec::with_capacity(names.len());
    let mut ess = Vec::with_capacity(names.len());
    for i in 0..layout.dim() {
        let chains: Vec<Vec<f64>> = outputs
            .iter()
            .map(|o| {
                o.draws
                    .iter()
                    .map(|phi| if i < 2 * p { phi[i] } else { phi[i].exp() })
                    .collect()
            })
            .collect();
        rhat.push(split_rhat(&chains));
        ess.push(effective_sample_size(&chains));
    }

    let mut posterior = HbmPosterior {
        p,
        n_chains: mcmc.chains,
        draws_per_chain: mcmc.samples,
        gamma_samples,
        sigma_samples,
        sigma_y_samples,
        log_density,
        diagnostics: Diagnostics { parameter_names: names, rhat, ess, acceptance },
        groups: groups
            .iter()
            .map(|g| GroupSummary { index: g.index, g_vec: g.g_vec().clone(), stats: g.stats().clone() })
            .collect(),
        standardizer: Standardizer::identity(p - 1),
        label_transform: LabelTransform::Identity,
        theta_conditionals: Vec::new(),
    };
    posterior.rebuild_conditionals()?;
    Ok(posterior)
}
