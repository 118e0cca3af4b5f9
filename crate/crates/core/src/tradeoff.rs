//! Accuracy improvement from one smart meter versus the customer's total privacy loss.
//!
//! With uncorrelated loads (`Pj = Pjj`) the fusion gain of the `(Z0, Zj)` estimator
//! depends on the meter's privacy loss `ε` only through two dimensionless ratios,
//! `η = Δ²/Pjj` (the customer's size at the location) and `ζ = Pjj/(P0 + R0)` (the
//! location's share of line variability):
//!
//! ```text
//! Kj = 1 / (1 + 2η / (ε² (1 − ζ)))  ≈  ε² (1 − ζ) / (2η)
//! ```
//!
//! The customer's total loss is `ε0 + ε`, where `ε0² ≈ η ζ K² (1 + P0/R0)` is the baseline
//! loss already caused by the substation meter. The correlated-load case is handled by
//! [`crate::estimators`]; this module assumes independence throughout.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::feeder::FeederModel;
use crate::privacy::{baseline_epsilon_from, compose, inverse_q, PrivacyBudget};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dimensionless {
    pub eta: f64,
    pub zeta: f64,
}

/// `η = Δ²/Pjj` and `ζ = Pjj/(P0 + R0)` at location `j` (zero-based).
///
/// The load at `j` must be uncorrelated with the others (`Pj = Pjj`). `ζ` reaches 1 only
/// for a single-location line with a noiseless substation meter; [`k_of_epsilon`] rejects
/// that boundary.
pub fn dimensionless_params(model: &FeederModel, j: usize) -> Result<Dimensionless> {
    let n = model.n_locations();
    if j >= n {
        return invalid(format!("location index {j} out of range for {n} locations"));
    }
    let pjj = model.covariance()[(j, j)];
    let pj = model.moments().p_row[j];
    if (pj - pjj).abs() > 1e-12 * pjj {
        return Err(Error::Domain(format!(
            "location {} is correlated with other loads (Pj = {pj}, Pjj = {pjj})",
            j + 1
        )));
    }
    let delta = model.customer_bound();
    Ok(Dimensionless {
        eta: delta * delta / pjj,
        zeta: pjj / model.substation_variance(),
    })
}

fn check_eta_zeta(eta: f64, zeta: f64) -> Result<()> {
    if !(eta > 0.0) {
        return Err(Error::Domain(format!("eta must be > 0, got {eta}")));
    }
    if !(zeta > 0.0 && zeta < 1.0) {
        return Err(Error::Domain(format!("zeta must lie in (0, 1), got {zeta}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KValues {
    pub exact: f64,
    pub quadratic: f64,
}

/// Relative improvement `Kj` at meter privacy loss `epsilon`, exactly and in the
/// small-`ε` quadratic form. Since `exact = q/(1+q)` with `q = quadratic`, the
/// approximation always overestimates.
pub fn k_of_epsilon(eta: f64, zeta: f64, epsilon: f64) -> Result<KValues> {
    check_eta_zeta(eta, zeta)?;
    if !(epsilon > 0.0) {
        return invalid(format!("meter epsilon must be > 0, got {epsilon}"));
    }
    let quadratic = epsilon * epsilon * (1.0 - zeta) / (2.0 * eta);
    Ok(KValues {
        exact: 1.0 / (1.0 + 2.0 * eta / (epsilon * epsilon * (1.0 - zeta))),
        quadratic,
    })
}

fn check_baseline_args(delta0: f64, p0: f64, r0: f64) -> Result<()> {
    if r0 == 0.0 {
        return Err(Error::InfinitePrivacyLoss);
    }
    if !(r0 > 0.0) || !(p0 > 0.0) {
        return invalid(format!("P0 and R0 must be > 0, got P0={p0}, R0={r0}"));
    }
    if !(delta0 > 0.0 && delta0 < 1.0) {
        return invalid(format!("delta0 must lie in (0, 1), got {delta0}"));
    }
    Ok(())
}

/// Baseline loss `ε0 = sqrt(η ζ K² (1 + P0/R0))`, `K = Q⁻¹(δ0)`.
pub fn epsilon0_approx(eta: f64, zeta: f64, delta0: f64, p0: f64, r0: f64) -> Result<f64> {
    check_eta_zeta(eta, zeta)?;
    check_baseline_args(delta0, p0, r0)?;
    let k = inverse_q(delta0)?;
    Ok(libm::sqrt(eta * zeta * k * k * (1.0 + p0 / r0)))
}

/// Baseline loss from the exact Gaussian-mechanism inversion, with
/// `Δ² = η ζ (P0 + R0)` and `σ0 = sqrt(R0)`.
pub fn epsilon0_exact(eta: f64, zeta: f64, delta0: f64, p0: f64, r0: f64) -> Result<f64> {
    check_eta_zeta(eta, zeta)?;
    check_baseline_args(delta0, p0, r0)?;
    let delta = libm::sqrt(eta * zeta * (p0 + r0));
    Ok(baseline_epsilon_from(delta, libm::sqrt(r0), delta0)?.exact)
}

/// Both sides of `Kj ≈ (K²/2)(1 + P0/R0) ζ(1 − ζ)(ε/ε0)²`, with `ε0` from
/// [`epsilon0_approx`]. The left side is the quadratic form of [`k_of_epsilon`]; the
/// two agree identically.
pub fn curvature_identity_check(
    eta: f64,
    zeta: f64,
    delta0: f64,
    p0: f64,
    r0: f64,
    epsilon: f64,
) -> Result<(f64, f64)> {
    let lhs = k_of_epsilon(eta, zeta, epsilon)?.quadratic;
    let eps0 = epsilon0_approx(eta, zeta, delta0, p0, r0)?;
    let k = inverse_q(delta0)?;
    let ratio = epsilon / eps0;
    let rhs = 0.5 * k * k * (1.0 + p0 / r0) * zeta * (1.0 - zeta) * ratio * ratio;
    Ok((lhs, rhs))
}

/// How the baseline `ε0` of a sweep is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Epsilon0Mode {
    /// Square-root approximation of the trade-off curve.
    #[default]
    Approximate,
    /// Exact inversion of the Gaussian-mechanism calibration.
    Exact,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffConfig {
    pub p0: f64,
    pub r0: f64,
    pub delta0: f64,
    pub eta: f64,
    pub zeta: f64,
    /// Meter privacy losses, positive and strictly increasing.
    pub epsilon_grid: Vec<f64>,
}

impl TradeoffConfig {
    pub fn validate(&self) -> Result<()> {
        check_eta_zeta(self.eta, self.zeta)?;
        check_baseline_args(self.delta0, self.p0, self.r0)?;
        if self.epsilon_grid.is_empty() {
            return invalid("epsilon grid is empty");
        }
        if !(self.epsilon_grid[0] > 0.0) {
            return invalid(format!(
                "epsilon grid entries must be > 0, got {}",
                self.epsilon_grid[0]
            ));
        }
        if let Some(w) = self.epsilon_grid.windows(2).find(|w| !(w[1] > w[0])) {
            return invalid(format!(
                "epsilon grid must be strictly increasing ({} then {})",
                w[0], w[1]
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TradeoffPoint {
    /// `ε0 + ε`
    pub total_epsilon: f64,
    /// `δ0 e^ε`, clamped at one
    pub total_delta: f64,
    pub epsilon_meter: f64,
    pub k_exact: f64,
    pub k_quadratic: f64,
    pub epsilon0: f64,
}

/// One trade-off curve. The first point is the baseline `(ε0, 0)` with no meter; the
/// remaining points follow `epsilon_grid`.
pub fn sweep_figure_curves(config: &TradeoffConfig, mode: Epsilon0Mode) -> Result<Vec<TradeoffPoint>> {
    config.validate()?;
    let TradeoffConfig {
        p0,
        r0,
        delta0,
        eta,
        zeta,
        ..
    } = *config;
    let eps0 = match mode {
        Epsilon0Mode::Approximate => epsilon0_approx(eta, zeta, delta0, p0, r0)?,
        Epsilon0Mode::Exact => epsilon0_exact(eta, zeta, delta0, p0, r0)?,
    };
    let base = PrivacyBudget::new(eps0, delta0)?;
    let mut out = Vec::with_capacity(config.epsilon_grid.len() + 1);
    out.push(TradeoffPoint {
        total_epsilon: eps0,
        total_delta: delta0,
        epsilon_meter: 0.0,
        k_exact: 0.0,
        k_quadratic: 0.0,
        epsilon0: eps0,
    });
    for &eps in &config.epsilon_grid {
        let k = k_of_epsilon(eta, zeta, eps)?;
        let composed = compose(base, eps)?.budget;
        out.push(TradeoffPoint {
            total_epsilon: composed.epsilon(),
            total_delta: composed.delta(),
            epsilon_meter: eps,
            k_exact: k.exact,
            k_quadratic: k.quadratic,
            epsilon0: eps0,
        });
    }
    Ok(out)
}

/// A two-location uncorrelated feeder whose first location has the given `(η, ζ)` and
/// whose prior variance sums to `p0`. Requires `ζ (P0 + R0) < P0`.
pub fn uncorrelated_model_for(eta: f64, zeta: f64, p0: f64, r0: f64) -> Result<FeederModel> {
    check_eta_zeta(eta, zeta)?;
    let pjj = zeta * (p0 + r0);
    if !(pjj < p0) {
        return Err(Error::Domain(format!(
            "zeta {zeta} cannot be realized with P0={p0}, R0={r0}"
        )));
    }
    let delta = libm::sqrt(eta * pjj);
    FeederModel::uncorrelated(alloc::vec![0.0, 0.0], &[pjj, p0 - pjj], r0, delta)
}

/// Meter noise variance `Rj = 2Δ²/ε²` of the Laplace mechanism at privacy loss `ε`.
pub fn meter_noise_variance(customer_bound: f64, epsilon: f64) -> f64 {
    2.0 * customer_bound * customer_bound / (epsilon * epsilon)
}
