//! Closed-form variance of the difference in means under the crossed
//! random-effects model
//!
//! `Y_ij^(d) = μ^(d) + α_i^(d) + β_j^(d) + ε_ij^(d)`
//!
//! with users assigned to conditions. Users and user–item pairs appear in one
//! condition only, so only the item effects carry a cross-condition
//! covariance. All functions take true parameters; nothing is estimated.

use alloc::format;

use crate::duplication::{DuplicationStats, ExposureCounts};
use crate::error::{Error, Result};

/// Standard deviations per condition (index 0 = control) and the
/// cross-condition covariances of the random effects.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VarianceComponents {
    pub sigma_alpha: [f64; 2],
    pub sigma_beta: [f64; 2],
    pub sigma_eps: [f64; 2],
    pub cov_beta01: f64,
    /// Not identifiable from observed data; kept for completeness.
    pub cov_alpha01: f64,
    pub cov_eps01: f64,
}

impl VarianceComponents {
    /// Same standard deviations in both conditions, with item effects
    /// correlated by `rho_beta` across conditions.
    pub fn homogeneous(sigma_alpha: f64, sigma_beta: f64, sigma_eps: f64, rho_beta: f64) -> Self {
        VarianceComponents {
            sigma_alpha: [sigma_alpha; 2],
            sigma_beta: [sigma_beta; 2],
            sigma_eps: [sigma_eps; 2],
            cov_beta01: rho_beta * sigma_beta * sigma_beta,
            cov_alpha01: sigma_alpha * sigma_alpha,
            cov_eps01: sigma_eps * sigma_eps,
        }
    }

    /// Components satisfying the sharp-null equalities: equal variances and
    /// perfectly correlated effects.
    pub fn sharp_null(sigma_alpha: f64, sigma_beta: f64, sigma_eps: f64) -> Self {
        Self::homogeneous(sigma_alpha, sigma_beta, sigma_eps, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let sds = self.sigma_alpha.iter().chain(&self.sigma_beta).chain(&self.sigma_eps);
        if sds.clone().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::param(
                "sigma",
                "standard deviations must be finite and non-negative",
            ));
        }
        let bound = |name: &'static str, cov: f64, s: [f64; 2]| {
            // Small slack for covariances built as ρσ² with ρ = ±1.
            if !cov.is_finite() || cov.abs() > s[0] * s[1] * (1.0 + 1e-12) {
                Err(Error::param(name, format!("|{cov}| exceeds {}·{}", s[0], s[1])))
            } else {
                Ok(())
            }
        };
        bound("cov_beta01", self.cov_beta01, self.sigma_beta)?;
        bound("cov_alpha01", self.cov_alpha01, self.sigma_alpha)?;
        bound("cov_eps01", self.cov_eps01, self.sigma_eps)
    }
}

fn check_common_n(n_per_condition: [u64; 2], n: u64) -> Result<()> {
    if n == 0 {
        return Err(Error::InconsistentCounts("N must be positive".into()));
    }
    if n_per_condition != [n, n] {
        return Err(Error::InconsistentCounts(format!(
            "condition totals {:?} differ from N = {n}",
            n_per_condition
        )));
    }
    Ok(())
}

/// Variance of δ̂ from per-unit exposure counts:
///
/// `N⁻² [ Σ_i (n_i·^(1))²σ²_α1 + (n_i·^(0))²σ²_α0
///      + Σ_j (n_·j^(1))²σ²_β1 + (n_·j^(0))²σ²_β0 − 2 n_·j^(0) n_·j^(1) σ_β01
///      + Σ_ij (n_ij^(1))²σ²_ε1 + (n_ij^(0))²σ²_ε0 ]`.
///
/// The residual term is pair-level: repeated observations of a pair share
/// one `ε`.
pub fn var_delta_counts(counts: &ExposureCounts, vc: &VarianceComponents, n: u64) -> Result<f64> {
    vc.validate()?;
    check_common_n(counts.totals(), n)?;
    let item_totals = counts.items.iter().fold([0, 0], |a, c| [a[0] + c[0], a[1] + c[1]]);
    let pair_totals = counts.pairs.iter().fold([0, 0], |a, c| [a[0] + c[0], a[1] + c[1]]);
    if item_totals != [n, n] || pair_totals != [n, n] {
        return Err(Error::InconsistentCounts(format!(
            "user, item and pair totals disagree: items {item_totals:?}, pairs {pair_totals:?}"
        )));
    }
    let sq = |x: u64| (x as f64) * (x as f64);
    let var = |s: f64| s * s;
    let mut total = 0.0;
    for c in &counts.users {
        total += sq(c[1]) * var(vc.sigma_alpha[1]) + sq(c[0]) * var(vc.sigma_alpha[0]);
    }
    for c in &counts.items {
        total += sq(c[1]) * var(vc.sigma_beta[1]) + sq(c[0]) * var(vc.sigma_beta[0])
            - 2.0 * (c[0] as f64) * (c[1] as f64) * vc.cov_beta01;
    }
    for c in &counts.pairs {
        total += sq(c[1]) * var(vc.sigma_eps[1]) + sq(c[0]) * var(vc.sigma_eps[0]);
    }
    Ok(total / sq(n))
}

/// Variance of δ̂ from duplication coefficients, for homogeneous components
/// and pairs observed at most once:
///
/// `N⁻¹ [ ν_A^(1)σ²_α1 + ν_A^(0)σ²_α0 + ν_B^(1)σ²_β1 + ν_B^(0)σ²_β0 − 2ω σ_β01 + σ²_ε0 + σ²_ε1 ]`.
pub fn var_delta_coeffs(dup: &DuplicationStats, vc: &VarianceComponents, n: u64) -> Result<f64> {
    vc.validate()?;
    check_common_n(dup.n, n)?;
    let v = |s: f64| s * s;
    let total = dup.nu_user[1] * v(vc.sigma_alpha[1])
        + dup.nu_user[0] * v(vc.sigma_alpha[0])
        + dup.nu_item[1] * v(vc.sigma_beta[1])
        + dup.nu_item[0] * v(vc.sigma_beta[0])
        - 2.0 * dup.omega_item * vc.cov_beta01
        + v(vc.sigma_eps[0])
        + v(vc.sigma_eps[1]);
    Ok(total / n as f64)
}

/// Variance of δ̂ under the sharp null:
///
/// `N⁻¹ [ (ν_A^(1) + ν_A^(0))σ²_α + κ σ²_β + 2σ²_ε ]`.
pub fn var_delta_sharp_null(
    dup: &DuplicationStats,
    sigma_alpha: f64,
    sigma_beta: f64,
    sigma_eps: f64,
    n: u64,
) -> Result<f64> {
    VarianceComponents::sharp_null(sigma_alpha, sigma_beta, sigma_eps).validate()?;
    check_common_n(dup.n, n)?;
    let total = (dup.nu_user[1] + dup.nu_user[0]) * sigma_alpha * sigma_alpha
        + dup.kappa_item * sigma_beta * sigma_beta
        + 2.0 * sigma_eps * sigma_eps;
    Ok(total / n as f64)
}
