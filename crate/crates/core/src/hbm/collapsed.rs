//! Given the scales, the stacked marginal `y = A γ + e` is linear-Gaussian
//! in `γ`, so both `p(γ | σ, σ_y, y)` and the evidence `p(y | σ, σ_y)` are
//! available in closed form.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::model::{marginal_log_likelihood_stats, SufficientStats};
use super::HbmError;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Gaussian over `vec(γ)` (row-major `p × 2`) with its precision factor.
pub struct GammaGaussian {
    pub mean: DVector<f64>,
    pub precision: Cholesky<f64, Dyn>,
    /// `log p(y | σ, σ_y)` with `γ` integrated out.
    pub log_evidence: f64,
}

impl GammaGaussian {
    /// `mean + L⁻ᵀ z` for a standard normal `z`.
    pub fn draw(&self, z: DVector<f64>) -> DVector<f64> {
        let offset = self.precision.l_dirty().transpose().solve_upper_triangular(&z).unwrap_or(z);
        &self.mean + offset
    }
}

/// `(XᵀC⁻¹X, XᵀC⁻¹y)` for `C = s² I + X diag(σ²) Xᵀ`, via
/// `C⁻¹ = (I − X K⁻¹ Xᵀ) / s²` with `K = s² diag(σ⁻²) + XᵀX`.
fn whitened(stats: &SufficientStats, sigma: &[f64], s2: f64) -> Result<(DMatrix<f64>, DVector<f64>), HbmError> {
    let p = stats.dim();
    let mut k = stats.gram.clone();
    for i in 0..p {
        k[(i, i)] += s2 / (sigma[i] * sigma[i]);
    }
    let chol = k.cholesky().ok_or(HbmError::SingularPrecision)?;
    let m = (&stats.gram - &stats.gram * chol.solve(&stats.gram)) / s2;
    let r = (&stats.xty - &stats.gram * chol.solve(&stats.xty)) / s2;
    Ok(((&m + m.transpose()) * 0.5, r))
}

/// Posterior of `γ` under the prior `N(0, prior_scale² I)` with the
/// scales held fixed.
pub fn gamma_given_scales(
    groups: &[(&SufficientStats, &DVector<f64>)],
    sigma: &[f64],
    sigma_y: f64,
    prior_scale: f64,
) -> Result<GammaGaussian, HbmError> {
    let p = sigma.len();
    let d = 2 * p;
    let s2 = sigma_y * sigma_y + super::MARGINAL_JITTER;
    let mut precision = DMatrix::<f64>::identity(d, d) / (prior_scale * prior_scale);
    let mut shift = DVector::<f64>::zeros(d);
    for (stats, g) in groups {
        if stats.n == 0 {
            continue;
        }
        let (m, r) = whitened(stats, sigma, s2)?;
        for k in 0..p {
            for c in 0..2 {
                shift[2 * k + c] += r[k] * g[c];
                for l in 0..p {
                    for e in 0..2 {
                        precision[(2 * k + c, 2 * l + e)] += m[(k, l)] * g[c] * g[e];
                    }
                }
            }
        }
    }
    let chol = precision.cholesky().ok_or(HbmError::SingularPrecision)?;
    let mean = chol.solve(&shift);
    let gamma = DMatrix::from_row_slice(p, 2, mean.as_slice());

    // p(y) = p(y | γ) p(γ) / p(γ | y), evaluated at the posterior mean
    let mut log_evidence = 0.0;
    for (stats, g) in groups {
        log_evidence += marginal_log_likelihood_stats(stats, g, &gamma, sigma, sigma_y)?;
    }
    let s0 = prior_scale;
    log_evidence += -0.5 * (d as f64 * (LN_2PI + 2.0 * s0.ln()) + mean.norm_squared() / (s0 * s0));
    let half_logdet_precision = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    log_evidence += 0.5 * d as f64 * LN_2PI - half_logdet_precision;
    if !log_evidence.is_finite() {
        return Err(HbmError::SingularPrecision);
    }
    Ok(GammaGaussian { mean, precision: chol, log_evidence })
}
