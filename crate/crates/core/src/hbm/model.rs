//! Linear-Gaussian algebra for one group.
//!
//! With `θ ~ N(m, D)`, `m = γ g`, `D = diag(σ²)` and `y = Xθ + ε`,
//! `ε ~ N(0, s² I)`, the group coefficients integrate out exactly:
//!
//! ```text
//! y ~ N(X m, s² I + X D Xᵀ)
//! ```
//!
//! Both the marginal and the conditional `θ | y` only need the sufficient
//! statistics `XᵀX`, `Xᵀy`, `yᵀy` and `n`, so every evaluation is
//! `O(p³)` regardless of group size. The determinant and quadratic form go
//! through `B = I + D^½ XᵀX D^½ / s²`, whose eigenvalues are all ≥ 1.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::HbmError;

/// Added to the level-1 noise variance before factorizing the marginal covariance.
pub const MARGINAL_JITTER: f64 = 1e-9;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SufficientStats {
    pub n: usize,
    pub gram: DMatrix<f64>,
    pub xty: DVector<f64>,
    pub yty: f64,
}

impl SufficientStats {
    pub fn dim(&self) -> usize {
        self.xty.len()
    }
}

/// Cells of one usage group: design rows `[1, x₁, …]`, labels and the
/// group-level vector `[1, mean g]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupData {
    pub index: usize,
    design: DMatrix<f64>,
    labels: DVector<f64>,
    g_vec: DVector<f64>,
    stats: SufficientStats,
}

impl GroupData {
    pub fn new(index: usize, design: DMatrix<f64>, labels: DVector<f64>, g_mean: f64) -> Result<Self, HbmError> {
        if design.nrows() != labels.len() {
            return Err(HbmError::Dimension(format!(
                "group {index}: {} design rows but {} labels",
                design.nrows(),
                labels.len()
            )));
        }
        if design.ncols() == 0 {
            return Err(HbmError::Dimension(format!("group {index}: design has no columns")));
        }
        if design.column(0).iter().any(|&v| v != 1.0) {
            return Err(HbmError::Dimension(format!("group {index}: first design column must be all ones")));
        }
        if design.iter().chain(labels.iter()).any(|v| !v.is_finite()) || !g_mean.is_finite() {
            return Err(HbmError::Dimension(format!("group {index}: non-finite data")));
        }
        let stats = SufficientStats {
            n: labels.len(),
            gram: design.transpose() * &design,
            xty: design.transpose() * &labels,
            yty: labels.dot(&labels),
        };
        Ok(Self { index, design, labels, g_vec: DVector::from_vec(vec![1.0, g_mean]), stats })
    }

    /// Builds the design from per-cell feature rows (without the intercept).
    pub fn from_rows(index: usize, features: &[Vec<f64>], labels: &[f64], g_mean: f64, p: usize) -> Result<Self, HbmError> {
        if let Some(r) = features.iter().find(|r| r.len() + 1 != p) {
            return Err(HbmError::Dimension(format!("group {index}: feature row of length {} for {p} coefficients", r.len())));
        }
        let design = DMatrix::from_fn(features.len(), p, |i, k| if k == 0 { 1.0 } else { features[i][k - 1] });
        Self::new(index, design, DVector::from_column_slice(labels), g_mean)
    }

    pub fn n(&self) -> usize {
        self.stats.n
    }

    pub fn dim(&self) -> usize {
        self.design.ncols()
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn labels(&self) -> &DVector<f64> {
        &self.labels
    }

    pub fn g_vec(&self) -> &DVector<f64> {
        &self.g_vec
    }

    pub fn stats(&self) -> &SufficientStats {
        &self.stats
    }
}

/// Gaussian over group coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Prior mean of the group coefficients, `γ g` with `γ` stored `p × 2`.
pub fn prior_mean(gamma: &DMatrix<f64>, g_vec: &DVector<f64>) -> DVector<f64> {
    gamma * g_vec
}

fn check_scales(sigma: &[f64], sigma_y: f64, p: usize) -> Result<(), HbmError> {
    if sigma.len() != p {
        return Err(HbmError::Dimension(format!("{} scales for {p} coefficients", sigma.len())));
    }
    if sigma.iter().chain(std::iter::once(&sigma_y)).any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(HbmError::InvalidConfig(format!("scales must be positive and finite: sigma {sigma:?}, sigma_y {sigma_y}")));
    }
    Ok(())
}

pub(crate) fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e.abs()), hi.max(e.abs())));
    hi / lo
}

/// Log marginal likelihood from sufficient statistics.
pub fn marginal_log_likelihood_stats(
    stats: &SufficientStats,
    g_vec: &DVector<f64>,
    gamma: &DMatrix<f64>,
    sigma: &[f64],
    sigma_y: f64,
) -> Result<f64, HbmError> {
    let p = stats.dim();
    if gamma.nrows() != p || gamma.ncols() != g_vec.len() {
        return Err(HbmError::Dimension(format!("gamma is {}×{}, expected {p}×{}", gamma.nrows(), gamma.ncols(), g_vec.len())));
    }
    check_scales(sigma, sigma_y, p)?;
    if stats.n == 0 {
        return Ok(0.0);
    }
    let s2 = sigma_y * sigma_y + MARGINAL_JITTER;
    let m = prior_mean(gamma, g_vec);
    let gm = &stats.gram * &m;
    let rtr = stats.yty - 2.0 * m.dot(&stats.xty) + m.dot(&gm);
    let xtr = &stats.xty - gm;

    let mut b = stats.gram.clone();
    for i in 0..p {
        for j in 0..p {
            b[(i, j)] *= sigma[i] * sigma[j] / s2;
        }
        b[(i, i)] += 1.0;
    }
    let u = DVector::from_fn(p, |i, _| sigma[i] * xtr[i]);
    let chol = b
        .clone()
        .cholesky()
        .ok_or_else(|| HbmError::NotPositiveDefinite { condition_number: condition_number(&b) })?;
    let logdet_b = 2.0 * chol.l_dirty().diagonal().iter().take(p).map(|d| d.ln()).sum::<f64>();
    let binv_u = chol.solve(&u);
    let n = stats.n as f64;
    let quad = rtr / s2 - u.dot(&binv_u) / (s2 * s2);
    let ll = -0.5 * (n * LN_2PI + n * s2.ln() + logdet_b + quad);
    if !ll.is_finite() {
        return Err(HbmError::NotPositiveDefinite { condition_number: condition_number(&b) });
    }
    Ok(ll)
}

/// `log N(y; X γ g, σ_y² I + X diag(σ²) Xᵀ)` for one group.
pub fn marginal_log_likelihood(group: &GroupData, gamma: &DMatrix<f64>, sigma: &[f64], sigma_y: f64) -> Result<f64, HbmError> {
    marginal_log_likelihood_stats(&group.stats, &group.g_vec, gamma, sigma, sigma_y)
}

pub fn theta_conditional_stats(
    stats: &SufficientStats,
    g_vec: &DVector<f64>,
    gamma: &DMatrix<f64>,
    sigma: &[f64],
    sigma_y: f64,
) -> Result<CoefGaussian, HbmError> {
    let p = stats.dim();
    check_scales(sigma, sigma_y, p)?;
    let m = prior_mean(gamma, g_vec);
    let s2 = sigma_y * sigma_y;
    let mut precision = &stats.gram / s2;
    let mut rhs = &stats.xty / s2;
    for k in 0..p {
        let prior_prec = 1.0 / (sigma[k] * sigma[k]);
        precision[(k, k)] += prior_prec;
        rhs[k] += prior_prec * m[k];
    }
    let chol = precision.clone().cholesky().ok_or(HbmError::SingularPrecision)?;
    let mean = chol.solve(&rhs);
    let mut cov = chol.inverse();
    cov = (&cov + cov.transpose()) * 0.5;
    if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
        return Err(HbmError::SingularPrecision);
    }
    Ok(CoefGaussian { mean, cov })
}

/// Conjugate posterior `θ_j | γ, σ, y_j`.
pub fn theta_conditional(group: &GroupData, gamma: &DMatrix<f64>, sigma: &[f64], sigma_y: f64) -> Result<CoefGaussian, HbmError> {
    theta_conditional_stats(&group.stats, &group.g_vec, gamma, sigma, sigma_y)
}
