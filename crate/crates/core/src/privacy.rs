//! Noise calibration for differential privacy and budget composition.
//!
//! Nothing in this module reads the load prior: the privacy guarantees hold for any load
//! distribution. [`baseline_epsilon`] takes a [`FeederModel`] only for its customer bound
//! and substation noise.
//!
//! All calibrations are minimal (the bounds hold with equality). Callers that want slack
//! add it themselves.

use alloc::format;

use crate::error::{invalid, Error, Result};
use crate::feeder::FeederModel;
use crate::special::normal_tail;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyBudget {
    epsilon: f64,
    delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return invalid(format!("epsilon must be >= 0, got {epsilon}"));
        }
        if !(0.0..=1.0).contains(&delta) {
            return invalid(format!("delta must lie in [0, 1], got {delta}"));
        }
        Ok(Self { epsilon, delta })
    }

    /// Pure epsilon-differential privacy (`delta = 0`).
    pub fn pure(epsilon: f64) -> Result<Self> {
        Self::new(epsilon, 0.0)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// The two queries a feeder exposes about customer data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryKind {
    /// Substation current `q0 = sum(l)`.
    TotalCurrent,
    /// A single location's aggregate load `qj = lj`.
    SingleLoad,
}

/// Worst-case change of the query when one customer changes their load by at most `Δ`.
///
/// Both queries are sums in which a customer appears once, so both have sensitivity `Δ`.
pub fn sensitivity(kind: QueryKind, customer_bound: f64) -> Result<f64> {
    if !(customer_bound > 0.0) {
        return invalid(format!("customer bound must be > 0, got {customer_bound}"));
    }
    match kind {
        QueryKind::TotalCurrent | QueryKind::SingleLoad => Ok(customer_bound),
    }
}

/// Laplace scale `b = S / ε` giving ε-differential privacy. The noise variance is `2 b²`.
pub fn laplace_scale_for(epsilon: f64, sensitivity: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return invalid(format!("epsilon must be > 0, got {epsilon}"));
    }
    if !(sensitivity > 0.0) {
        return invalid(format!("sensitivity must be > 0, got {sensitivity}"));
    }
    Ok(sensitivity / epsilon)
}

/// Gaussian standard deviation `σ = S/(2ε) (K + sqrt(K² + 2ε))`, `K = Q⁻¹(δ)`, giving
/// (ε, δ)-differential privacy.
pub fn gaussian_sigma_for(epsilon: f64, delta: f64, sensitivity: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return invalid(format!("epsilon must be > 0, got {epsilon}"));
    }
    if !(sensitivity > 0.0) {
        return invalid(format!("sensitivity must be > 0, got {sensitivity}"));
    }
    let k = inverse_q(delta)?;
    Ok(sensitivity / (2.0 * epsilon) * (k + libm::sqrt(k * k + 2.0 * epsilon)))
}

const INVERSE_Q_BRACKET: (f64, f64) = (-10.0, 10.0);

/// Inverse of the standard normal upper tail: the `K` with `Q(K) = δ`.
///
/// Bisection on `[-10, 10]` down to adjacent floating point values, so the residual
/// `|Q(K) - δ|` is bounded by the density times one ulp of `K` plus the `erfc` error.
pub fn inverse_q(delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return invalid(format!("delta must lie in (0, 1), got {delta}"));
    }
    let (mut lo, mut hi) = INVERSE_Q_BRACKET;
    // Q is decreasing: Q(lo) > delta > Q(hi) for every representable delta in range
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if normal_tail(mid) > delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (rlo, rhi) = ((normal_tail(lo) - delta).abs(), (normal_tail(hi) - delta).abs());
    Ok(if rlo <= rhi { lo } else { hi })
}

/// Baseline privacy loss of the substation meter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineEpsilon {
    /// Solves `σ0 = Δ/(2ε0) (K + sqrt(K² + 2ε0))` numerically.
    pub exact: f64,
    /// First-order approximation `Δ K / σ0`.
    pub approx: f64,
    /// `Q⁻¹(δ0)`
    pub k: f64,
}

const BASELINE_BRACKET: (f64, f64) = (1e-12, 1e3);

/// Baseline `(ε0, δ0)` privacy that the substation reading `Z0` gives every customer.
pub fn baseline_epsilon(model: &FeederModel, delta0: f64) -> Result<BaselineEpsilon> {
    let r0 = model.substation_noise_var();
    if r0 == 0.0 {
        return Err(Error::InfinitePrivacyLoss);
    }
    baseline_epsilon_from(model.customer_bound(), libm::sqrt(r0), delta0)
}

/// [`baseline_epsilon`] from the customer bound `Δ` and the substation noise deviation `σ0`.
///
/// `Δ = 0` gives `ε0 = 0`. The exact value is found by bisection over `(1e-12, 1e3)`; the
/// calibrated deviation is strictly decreasing in `ε`.
pub fn baseline_epsilon_from(customer_bound: f64, sigma0: f64, delta0: f64) -> Result<BaselineEpsilon> {
    if sigma0 == 0.0 {
        return Err(Error::InfinitePrivacyLoss);
    }
    if !(sigma0 > 0.0) {
        return invalid(format!("substation noise deviation must be > 0, got {sigma0}"));
    }
    if !(customer_bound >= 0.0) {
        return invalid(format!("customer bound must be >= 0, got {customer_bound}"));
    }
    let k = inverse_q(delta0)?;
    let approx = customer_bound * k / sigma0;
    if customer_bound == 0.0 {
        return Ok(BaselineEpsilon { exact: 0.0, approx, k });
    }
    let sigma_at = |eps: f64| customer_bound / (2.0 * eps) * (k + libm::sqrt(k * k + 2.0 * eps));
    let (mut lo, mut hi) = BASELINE_BRACKET;
    if sigma_at(lo) <= sigma0 {
        // any positive epsilon already suffices
        return Ok(BaselineEpsilon { exact: 0.0, approx, k });
    }
    if sigma_at(hi) > sigma0 {
        return Err(Error::Domain(format!(
            "baseline epsilon exceeds {hi}: customer bound {customer_bound} swamps substation noise {sigma0}"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sigma_at(mid) > sigma0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(BaselineEpsilon { exact: hi, approx, k })
}

/// Result of composing the substation and smart-meter releases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Composition {
    pub budget: PrivacyBudget,
    /// `δ0 e^ε` exceeded one and was clamped; the guarantee is vacuous.
    pub vacuous: bool,
}

/// `(ε0, δ0)` for `Z0` composed with an ε-private meter gives `(ε0 + ε, δ0 e^ε)`.
pub fn compose(base: PrivacyBudget, meter_epsilon: f64) -> Result<Composition> {
    if !(meter_epsilon >= 0.0) {
        return invalid(format!("meter epsilon must be >= 0, got {meter_epsilon}"));
    }
    let delta = base.delta * libm::exp(meter_epsilon);
    let vacuous = delta > 1.0;
    Ok(Composition {
        budget: PrivacyBudget {
            epsilon: base.epsilon + meter_epsilon,
            delta: delta.min(1.0),
        },
        vacuous,
    })
}

/// Number of shift values tried in `[-S, S]` by [`laplace_dp_ratio_check`].
const RATIO_SHIFTS: usize = 64;

fn laplace_log_density(w: f64, b: f64) -> f64 {
    -w.abs() / b - libm::log(2.0 * b)
}

/// Largest log density ratio `ln(p_b(w) / p_b(w + s))` over the grid points `w` and
/// shifts `s` in `[-S, S]` (endpoints included). Never exceeds `S / b`.
pub fn laplace_dp_ratio_check(b: f64, sensitivity: f64, grid: &[f64]) -> Result<f64> {
    if !(b > 0.0) {
        return invalid(format!("Laplace scale must be > 0, got {b}"));
    }
    if !(sensitivity >= 0.0) {
        return invalid(format!("sensitivity must be >= 0, got {sensitivity}"));
    }
    if grid.is_empty() {
        return invalid("density-ratio grid is empty");
    }
    let mut worst = 0.0_f64;
    for &w in grid {
        let here = laplace_log_density(w, b);
        for i in 0..=RATIO_SHIFTS {
            let s = -sensitivity + 2.0 * sensitivity * (i as f64) / (RATIO_SHIFTS as f64);
            worst = worst.max(here - laplace_log_density(w + s, b));
        }
    }
    Ok(worst)
}

/// Does a ratio check result certify `epsilon`? Allows for rounding in the log densities.
pub fn ratio_within(ratio: f64, epsilon: f64) -> bool {
    ratio <= epsilon + 1e-12 * epsilon.max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use alloc::vec;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    #[test]
    fn sensitivity_is_customer_bound() {
        assert_eq!(sensitivity(QueryKind::TotalCurrent, 0.5).unwrap(), 0.5);
        assert_eq!(sensitivity(QueryKind::SingleLoad, 1.0).unwrap(), 1.0);
        assert!(sensitivity(QueryKind::SingleLoad, 0.0).is_err());
    }

    #[test]
    fn laplace_scales() {
        let b = laplace_scale_for(0.1, 0.5).unwrap();
        assert!((b - 5.0).abs() < 1e-15);
        assert!((2.0 * b * b - 50.0).abs() < 1e-12);
        assert_eq!(laplace_scale_for(1.0, 1.0).unwrap(), 1.0);
        assert!((laplace_scale_for(0.2, 1.0).unwrap() - 5.0).abs() < 1e-15);
        assert!((laplace_scale_for(0.4, 1.0).unwrap() - 2.5).abs() < 1e-15);
        assert!(laplace_scale_for(0.0, 1.0).is_err());
        assert!(laplace_scale_for(-1.0, 1.0).is_err());
    }

    #[test]
    fn inverse_q_known_values() {
        let k05 = inverse_q(0.05).unwrap();
        assert!((k05 - 1.644_853_626_951_472_2).abs() < 1e-12);
        assert!((k05 - 1.64).abs() < 0.01);
        let k01 = inverse_q(0.01).unwrap();
        assert!((k01 - 2.326_347_874_040_841).abs() < 1e-12);
        assert!(inverse_q(0.5).unwrap().abs() < 1e-15);
        for d in [0.5, 0.05, 0.01, 1e-6, 0.9, 1e-15] {
            let k = inverse_q(d).unwrap();
            assert!((normal_tail(k) - d).abs() <= 1e-12, "delta {d}");
        }
        assert!(inverse_q(0.0).is_err());
        assert!(inverse_q(1.0).is_err());
    }

    #[test]
    fn gaussian_sigma_example() {
        let s = gaussian_sigma_for(0.5, 0.05, 1.0).unwrap();
        assert!((s - 3.570).abs() < 1e-3, "sigma {s}");
        let s2 = gaussian_sigma_for(0.5, 0.05, 2.0).unwrap();
        assert!((s2 - 2.0 * s).abs() < 1e-14);
        assert!(gaussian_sigma_for(0.5, 1.0, 1.0).is_err());
        assert!(gaussian_sigma_for(0.5, 0.0, 1.0).is_err());
    }

    fn model(r0: f64, delta: f64) -> FeederModel {
        FeederModel::uncorrelated(vec![1.0, 2.0], &[0.5, 0.5], r0, delta).unwrap()
    }

    #[test]
    fn baseline_closed_form() {
        // sigma(eps) = Δ / (sqrt(K² + 2ε) − K) inverts to ε = ΔK/σ + Δ²/(2σ²)
        for (delta, sigma, d0) in [
            (0.5, 2.0, 0.05),
            (0.0324, 0.2236, 0.05),
            (1.0, 10.0, 1e-6),
            (0.1, 1.0, 0.3),
        ] {
            let b = baseline_epsilon_from(delta, sigma, d0).unwrap();
            let k = inverse_q(d0).unwrap();
            let closed = delta * k / sigma + delta * delta / (2.0 * sigma * sigma);
            assert!(((b.exact - closed) / closed).abs() < 1e-12, "{b:?} vs {closed}");
            assert!(b.exact >= b.approx);
        }
    }

    #[test]
    fn baseline_small_customer_limit() {
        let b = baseline_epsilon(&model(4.0, 1e-3), 0.05).unwrap();
        assert!(((b.exact - b.approx) / b.approx).abs() < 1e-3);
        let zero = baseline_epsilon_from(0.0, 1.0, 0.05).unwrap();
        assert_eq!(zero.exact, 0.0);
        assert_eq!(
            baseline_epsilon(&model(0.0, 0.5), 0.05),
            Err(Error::InfinitePrivacyLoss)
        );
    }

    #[test]
    fn baseline_independent_of_prior() {
        let a = FeederModel::uncorrelated(vec![1.0, 2.0], &[0.5, 0.5], 0.05, 0.2).unwrap();
        let p = Matrix::from_rows(&[[3.0, -1.0], [-1.0, 7.0]]).unwrap();
        let b = FeederModel::new(vec![-40.0, 9.0], p, 0.05, 0.2).unwrap();
        assert_eq!(baseline_epsilon(&a, 0.05), baseline_epsilon(&b, 0.05));
    }

    #[test]
    fn composition() {
        let base = PrivacyBudget::new(0.24, 0.05).unwrap();
        let c = compose(base, 0.11).unwrap();
        assert!((c.budget.epsilon() - 0.35).abs() < 1e-15);
        assert!((c.budget.delta() - 0.055_814).abs() < 1e-5);
        assert!(!c.vacuous);
        assert_eq!(compose(base, 0.0).unwrap().budget, base);
        let c = compose(PrivacyBudget::new(0.1, 0.9).unwrap(), 1.0).unwrap();
        assert!(c.vacuous);
        assert_eq!(c.budget.delta(), 1.0);
        assert!(compose(base, -0.1).is_err());
        assert!(PrivacyBudget::new(-0.1, 0.0).is_err());
        assert!(PrivacyBudget::new(0.1, 1.5).is_err());
    }

    #[test]
    fn ratio_check_examples() {
        let grid: Vec<f64> = (-200..=200).map(|i| i as f64 * 0.05).collect();
        let r = laplace_dp_ratio_check(5.0, 0.5, &grid).unwrap();
        assert!(ratio_within(r, 0.1));
        let r = laplace_dp_ratio_check(1.0, 1.0, &grid).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        // attained at |w| >= S, not in between
        let inner = laplace_dp_ratio_check(1.0, 1.0, &[0.0]).unwrap();
        assert!((inner - 1.0).abs() < 1e-12);
        let inner = laplace_dp_ratio_check(1.0, 1.0, &[0.25]).unwrap();
        assert!((inner - 1.0).abs() < 1e-12);
        assert_eq!(laplace_dp_ratio_check(1.0, 0.0, &grid).unwrap(), 0.0);
        assert!(laplace_dp_ratio_check(1.0, 1.0, &[]).is_err());
        // undersized scale breaks the claimed epsilon
        let r = laplace_dp_ratio_check(0.9 * 5.0, 0.5, &grid).unwrap();
        assert!(!ratio_within(r, 0.1));
    }

    proptest! {
        #[test]
        fn ratio_never_exceeds_s_over_b(b in 0.01..20.0f64, s in 0.0..5.0f64, w in -50.0..50.0f64) {
            let r = laplace_dp_ratio_check(b, s, &[w, -w, 0.5 * w]).unwrap();
            prop_assert!(ratio_within(r, s / b));
        }

        #[test]
        fn sigma_decreasing(eps in 0.01..5.0f64, d in 0.001..0.9f64, s in 0.1..3.0f64) {
            let base = gaussian_sigma_for(eps, d, s).unwrap();
            prop_assert!(gaussian_sigma_for(eps * 1.01, d, s).unwrap() < base);
            prop_assert!(gaussian_sigma_for(eps, d * 1.01, s).unwrap() < base);
            // rationalized form of the same bound
            let k = inverse_q(d).unwrap();
            let alt = s / (libm::sqrt(k * k + 2.0 * eps) - k);
            prop_assert!(((alt - base) / base).abs() < 1e-9);
        }

        #[test]
        fn compose_monotone(e0 in 0.0..2.0f64, d0 in 0.0..1.0f64, a in 0.0..3.0f64, da in 0.0..1.0f64) {
            let base = PrivacyBudget::new(e0, d0).unwrap();
            let lo = compose(base, a).unwrap().budget;
            let hi = compose(base, a + da).unwrap().budget;
            prop_assert!(hi.epsilon() >= lo.epsilon());
            prop_assert!(hi.delta() >= lo.delta());
        }

        #[test]
        fn baseline_regime(delta in 1e-4..0.05f64, sigma in 0.5..5.0f64, d0 in 1e-6..0.05f64) {
            let b = baseline_epsilon_from(delta, sigma, d0).unwrap();
            prop_assert!(b.exact >= b.approx * (1.0 - 1e-12));
            if b.approx <= 0.05 {
                prop_assert!((b.exact - b.approx) / b.approx <= 0.05);
            }
        }
    }
}
