//! Closed-form load estimators and their analytic error variances.
//!
//! - [`BaseMmse`]: conditional mean of the loads given the substation reading alone.
//! - [`LmmseFull`]: best linear estimator from the substation reading plus meter readings.
//! - [`ReducedLmmse`]: best linear estimator of `Lj` from `(Z0, Zj)` only, in closed form.
//!
//! The linear estimators use second moments only, so they apply unchanged to the
//! Laplacian meter noise: nothing here assumes Gaussian measurements. Accuracies are
//! error variances in amperes squared.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::feeder::{FeederModel, MeasurementSet};
use crate::linalg::{dot, Cholesky, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorTag {
    BaseMmse,
    LmmseFull,
    LmmseReduced,
    Map,
}

impl EstimatorTag {
    pub const ALL: [EstimatorTag; 4] = [
        EstimatorTag::BaseMmse,
        EstimatorTag::LmmseFull,
        EstimatorTag::LmmseReduced,
        EstimatorTag::Map,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorTag::BaseMmse => "base",
            EstimatorTag::LmmseFull => "lmmse-full",
            EstimatorTag::LmmseReduced => "lmmse-reduced",
            EstimatorTag::Map => "map",
        }
    }
}

impl core::fmt::Display for EstimatorTag {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub point: Vec<f64>,
    /// Error variances, when the estimator has a known accuracy formula.
    pub accuracy: Option<Vec<f64>>,
    pub estimator_tag: EstimatorTag,
}

/// Smart-meter noise variances `Rj = 2 bj²`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseVariances {
    r: Vec<f64>,
}

impl NoiseVariances {
    pub fn new(r: Vec<f64>) -> Result<Self> {
        if let Some(j) = r.iter().position(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "noise variance at location {} must be >= 0, got {}",
                j + 1,
                r[j]
            )));
        }
        Ok(Self { r })
    }

    /// Variances of Laplace noise with the given scales.
    pub fn from_laplace_scales(scales: &[f64]) -> Result<Self> {
        Self::new(scales.iter().map(|b| 2.0 * b * b).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.r
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// MMSE estimate from the substation reading: `m + P1 (z0 − m0) / (P0 + R0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseMmse {
    mean: Vec<f64>,
    m0: f64,
    gain: Vec<f64>,
    accuracy: Vec<f64>,
}

impl BaseMmse {
    pub fn new(model: &FeederModel) -> Result<Self> {
        let d = model.moments();
        let s = d.p0 + model.substation_noise_var();
        if !(s > 0.0) {
            return Err(Error::Degenerate("P0 + R0 = 0".into()));
        }
        let cov = model.covariance();
        let gain: Vec<f64> = d.p_row.iter().map(|pj| pj / s).collect();
        let accuracy = d
            .p_row
            .iter()
            .enumerate()
            .map(|(j, pj)| (cov[(j, j)] - pj * pj / s).max(0.0))
            .collect();
        Ok(Self {
            mean: model.mean().to_vec(),
            m0: d.m0,
            gain,
            accuracy,
        })
    }

    pub fn estimate(&self, z0: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.mean.len()];
        self.estimate_into(z0, &mut out);
        out
    }

    pub fn estimate_into(&self, z0: f64, out: &mut [f64]) {
        let innov = z0 - self.m0;
        for ((o, m), g) in out.iter_mut().zip(&self.mean).zip(&self.gain) {
            *o = m + g * innov;
        }
    }

    /// `Qj⁰ = Pjj − Pj² / (P0 + R0)`
    pub fn accuracy(&self) -> &[f64] {
        &self.accuracy
    }
}

pub fn base_mmse(model: &FeederModel, z0: f64) -> Result<EstimateReport> {
    let b = BaseMmse::new(model)?;
    Ok(EstimateReport {
        point: b.estimate(z0),
        accuracy: Some(b.accuracy.clone()),
        estimator_tag: EstimatorTag::BaseMmse,
    })
}

/// LMMSE estimate of every load from `Z0` and a subset of the meter readings.
///
/// With `Z = (Z0, Z_S)`, the gain `G = C_LZ C_ZZ⁻¹` is obtained from a Cholesky solve of
/// the joint measurement covariance
///
/// ```text
/// C_ZZ = [ P0 + R0   (P1)_S^T        ]      C_LZ = [ P1 | P[:, S] ]
///        [ (P1)_S    P_SS + diag(R_S) ]
/// ```
///
/// and the error variance of `Lj` is `Pjj − (G C_LZ^T)_jj`.
#[derive(Debug, Clone, PartialEq)]
pub struct LmmseFull {
    meters: Vec<usize>,
    mean: Vec<f64>,
    m0: f64,
    // N x (1 + |S|)
    gain: Matrix,
    accuracy: Vec<f64>,
}

impl LmmseFull {
    /// Uses every meter.
    pub fn new(model: &FeederModel, noise: &NoiseVariances) -> Result<Self> {
        let all: Vec<usize> = (0..model.n_locations()).collect();
        Self::with_meters(model, noise, &all)
    }

    /// Uses `Z0` and the meters at `meters` (zero-based, distinct).
    pub fn with_meters(model: &FeederModel, noise: &NoiseVariances, meters: &[usize]) -> Result<Self> {
        let n = model.n_locations();
        check_len(n, noise.len())?;
        for (i, &k) in meters.iter().enumerate() {
            if k >= n || meters[..i].contains(&k) {
                return Err(Error::InvalidArgument(format!("bad meter index {k}")));
            }
        }
        let d = model.moments();
        let p = model.covariance();
        let r = noise.as_slice();
        let dim = 1 + meters.len();

        let czz = Matrix::from_fn(dim, dim, |a, b| match (a, b) {
            (0, 0) => d.p0 + model.substation_noise_var(),
            (0, b) => d.p_row[meters[b - 1]],
            (a, 0) => d.p_row[meters[a - 1]],
            (a, b) => {
                let (ka, kb) = (meters[a - 1], meters[b - 1]);
                p[(ka, kb)] + if ka == kb { r[ka] } else { 0.0 }
            }
        });
        let clz = Matrix::from_fn(n, dim, |j, c| if c == 0 { d.p_row[j] } else { p[(j, meters[c - 1])] });
        let chol = Cholesky::new(&czz)?;

        let mut gain = Matrix::zeros(n, dim);
        let mut accuracy = Vec::with_capacity(n);
        for j in 0..n {
            // C_ZZ symmetric: row j of G solves C_ZZ g = (C_LZ row j)
            let row = clz.row(j);
            let g = chol.solve(row);
            accuracy.push((p[(j, j)] - dot(&g, row)).max(0.0));
            for (c, v) in g.into_iter().enumerate() {
                gain[(j, c)] = v;
            }
        }
        Ok(Self {
            meters: meters.to_vec(),
            mean: model.mean().to_vec(),
            m0: d.m0,
            gain,
            accuracy,
        })
    }

    pub fn meters(&self) -> &[usize] {
        &self.meters
    }

    /// `z` holds all `N` meter readings; only those in the meter subset are read.
    pub fn estimate(&self, z0: f64, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.mean.len()];
        let mut innov = vec![0.0; 1 + self.meters.len()];
        self.estimate_into(z0, z, &mut innov, &mut out);
        out
    }

    pub(crate) fn estimate_into(&self, z0: f64, z: &[f64], innov: &mut [f64], out: &mut [f64]) {
        innov[0] = z0 - self.m0;
        for (slot, &k) in innov[1..].iter_mut().zip(&self.meters) {
            *slot = z[k] - self.mean[k];
        }
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.mean[j] + dot(self.gain.row(j), innov);
        }
    }

    pub fn gain(&self) -> &Matrix {
        &self.gain
    }

    pub fn accuracy(&self) -> &[f64] {
        &self.accuracy
    }
}

/// LMMSE estimate from `Z0` and every meter, with its accuracies.
pub fn lmmse_full(model: &FeederModel, noise: &NoiseVariances, meas: &MeasurementSet) -> Result<EstimateReport> {
    check_len(model.n_locations(), meas.z.len())?;
    let est = LmmseFull::new(model, noise)?;
    Ok(EstimateReport {
        point: est.estimate(meas.z0, &meas.z),
        accuracy: Some(est.accuracy.clone()),
        estimator_tag: EstimatorTag::LmmseFull,
    })
}

/// Output of the two-measurement estimator at one location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedEstimate {
    pub estimate: f64,
    /// `Qj^{0,j} = Qj⁰ (1 − Kj)`
    pub accuracy: f64,
    /// Fusion gain `Kj`, also the relative accuracy improvement over the base estimate.
    pub gain: f64,
}

/// Per-location quantities of the `(Z0, Zj)` estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
struct ReducedCoefficients {
    mean: f64,
    base_gain: f64,
    base_accuracy: f64,
    gain: f64,
}

fn reduced_coefficients(model: &FeederModel, noise_j: f64, j: usize) -> Result<ReducedCoefficients> {
    let n = model.n_locations();
    if j >= n {
        return Err(Error::InvalidArgument(format!(
            "location index {j} out of range for {n} locations"
        )));
    }
    if !(noise_j >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "meter noise variance must be >= 0, got {noise_j}"
        )));
    }
    let d = model.moments();
    let s = d.p0 + model.substation_noise_var();
    let pjj = model.covariance()[(j, j)];
    let pj = d.p_row[j];
    let num = s * pjj - pj * pj;
    let den = s * (pjj + noise_j) - pj * pj;
    if !(den > 0.0) || !(s > 0.0) {
        return Err(Error::Degenerate(format!(
            "fusion gain denominator {den:e} is not positive at location {}",
            j + 1
        )));
    }
    let gain = (num / den).clamp(0.0, 1.0);
    Ok(ReducedCoefficients {
        mean: model.mean()[j],
        base_gain: pj / s,
        base_accuracy: (pjj - pj * pj / s).max(0.0),
        gain,
    })
}

impl ReducedCoefficients {
    #[inline]
    fn apply(&self, innov0: f64, zj: f64) -> f64 {
        let base = self.mean + self.base_gain * innov0;
        base + self.gain * ((zj - self.mean) - self.base_gain * innov0)
    }
}

/// Closed-form LMMSE estimate of `Lj` from `(Z0, Zj)`, with
/// `Kj = ((R0+P0) Pjj − Pj²) / ((R0+P0)(Pjj+Rj) − Pj²)`.
pub fn lmmse_reduced(model: &FeederModel, noise_j: f64, j: usize, z0: f64, zj: f64) -> Result<ReducedEstimate> {
    let c = reduced_coefficients(model, noise_j, j)?;
    let m0 = model.moments().m0;
    Ok(ReducedEstimate {
        estimate: c.apply(z0 - m0, zj),
        accuracy: c.base_accuracy * (1.0 - c.gain),
        gain: c.gain,
    })
}

/// [`lmmse_reduced`] at every location, precomputed for repeated use.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedLmmse {
    m0: f64,
    coeffs: Vec<ReducedCoefficients>,
}

impl ReducedLmmse {
    pub fn new(model: &FeederModel, noise: &NoiseVariances) -> Result<Self> {
        check_len(model.n_locations(), noise.len())?;
        let coeffs = noise
            .as_slice()
            .iter()
            .enumerate()
            .map(|(j, &r)| reduced_coefficients(model, r, j))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            m0: model.moments().m0,
            coeffs,
        })
    }

    /// Same estimator with every gain shifted by `offset`; a deliberately suboptimal
    /// negative control.
    pub fn with_gain_offset(&self, offset: f64) -> Self {
        let mut out = self.clone();
        for c in &mut out.coeffs {
            c.gain += offset;
        }
        out
    }

    pub fn gains(&self) -> Vec<f64> {
        self.coeffs.iter().map(|c| c.gain).collect()
    }

    pub fn accuracy(&self) -> Vec<f64> {
        self.coeffs.iter().map(|c| c.base_accuracy * (1.0 - c.gain)).collect()
    }

    pub fn estimate(&self, z0: f64, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.coeffs.len()];
        self.estimate_into(z0, z, &mut out);
        out
    }

    pub fn estimate_into(&self, z0: f64, z: &[f64], out: &mut [f64]) {
        let innov0 = z0 - self.m0;
        for ((o, c), zj) in out.iter_mut().zip(&self.coeffs).zip(z) {
            *o = c.apply(innov0, *zj);
        }
    }

    pub fn report(&self, meas: &MeasurementSet) -> Result<EstimateReport> {
        check_len(self.coeffs.len(), meas.z.len())?;
        Ok(EstimateReport {
            point: self.estimate(meas.z0, &meas.z),
            accuracy: Some(self.accuracy()),
            estimator_tag: EstimatorTag::LmmseReduced,
        })
    }
}

/// Accuracies of the three estimators at one location, best first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyTriple {
    pub full: f64,
    pub reduced: f64,
    pub base: f64,
}

/// Absolute slack allowed in `full <= reduced <= base`.
pub const ORDERING_SLACK: f64 = 1e-10;

/// Computes `(Qj^{0:N}, Qj^{0,j}, Qj⁰)` for every location and checks
/// `Qj^{0:N} <= Qj^{0,j} <= Qj⁰`.
pub fn accuracy_ordering_check(model: &FeederModel, noise: &NoiseVariances) -> Result<Vec<AccuracyTriple>> {
    let full = LmmseFull::new(model, noise)?;
    let reduced = ReducedLmmse::new(model, noise)?;
    let base = BaseMmse::new(model)?;
    let reduced_acc = reduced.accuracy();
    let mut out = Vec::with_capacity(model.n_locations());
    for j in 0..model.n_locations() {
        let t = AccuracyTriple {
            full: full.accuracy[j],
            reduced: reduced_acc[j],
            base: base.accuracy[j],
        };
        if t.full > t.reduced + ORDERING_SLACK || t.reduced > t.base + ORDERING_SLACK {
            return Err(Error::OrderingViolation {
                location: j + 1,
                full: t.full,
                reduced: t.reduced,
                base: t.base,
            });
        }
        out.push(t);
    }
    Ok(out)
}
