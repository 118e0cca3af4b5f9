//! The distribution line: load prior, current conservation and measurement model.
//!
//! Loads `L ~ N(m, P)` attach at `N` service drops. The operator's substation meter reads
//! the total current `Z0 = sum(L) + W0` with `W0 ~ N(0, R0)`, and each location may report
//! `Zj = Lj + Wj` with `Wj ~ Lap(bj)`. All quantities are in amperes.
//!
//! Sampled loads are never truncated at zero: every closed-form result downstream assumes
//! an unrestricted Gaussian prior.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::linalg::{Cholesky, Matrix};

/// Relative tolerance on `|P_ij - P_ji|` when accepting a covariance.
const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// The seeded generator used for every sampling routine in the crate.
pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeederModel {
    mean: Vec<f64>,
    covariance: Matrix,
    substation_noise_var: f64,
    customer_bound: f64,
    chol: Cholesky,
}

impl FeederModel {
    /// Validates and builds a model.
    ///
    /// The covariance must be symmetric (to a relative `1e-12`) and positive definite with
    /// no pivot below `1e-12` times its largest diagonal; it is stored symmetrized.
    pub fn new(mean: Vec<f64>, covariance: Matrix, substation_noise_var: f64, customer_bound: f64) -> Result<Self> {
        let n = mean.len();
        if n == 0 {
            return Err(Error::InvalidModel("at least one location is required".into()));
        }
        if covariance.rows() != n || covariance.cols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: if covariance.rows() != n {
                    covariance.rows()
                } else {
                    covariance.cols()
                },
            });
        }
        if mean.iter().any(|v| !v.is_finite()) || covariance.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("non-finite entry in mean or covariance".into()));
        }
        if !(substation_noise_var >= 0.0) || !substation_noise_var.is_finite() {
            return Err(Error::InvalidModel(format!(
                "substation noise variance must be finite and >= 0, got {substation_noise_var}"
            )));
        }
        if !(customer_bound > 0.0) || !customer_bound.is_finite() {
            return Err(Error::InvalidModel(format!(
                "customer bound must be finite and > 0, got {customer_bound}"
            )));
        }
        let tol = SYMMETRY_TOLERANCE * covariance.max_abs();
        for i in 0..n {
            for j in (i + 1)..n {
                if (covariance[(i, j)] - covariance[(j, i)]).abs() > tol {
                    return Err(Error::InvalidModel(format!(
                        "covariance is not symmetric at ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        let covariance = Matrix::from_fn(n, n, |i, j| 0.5 * (covariance[(i, j)] + covariance[(j, i)]));
        let chol = Cholesky::new(&covariance)?;
        Ok(Self {
            mean,
            covariance,
            substation_noise_var,
            customer_bound,
            chol,
        })
    }

    /// Uncorrelated loads: a diagonal covariance.
    pub fn uncorrelated(
        mean: Vec<f64>,
        variances: &[f64],
        substation_noise_var: f64,
        customer_bound: f64,
    ) -> Result<Self> {
        Self::new(mean, Matrix::diagonal(variances), substation_noise_var, customer_bound)
    }

    pub fn n_locations(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &Matrix {
        &self.covariance
    }

    pub fn substation_noise_var(&self) -> f64 {
        self.substation_noise_var
    }

    pub fn customer_bound(&self) -> f64 {
        self.customer_bound
    }

    pub fn cholesky(&self) -> &Cholesky {
        &self.chol
    }

    /// Same prior with a different substation noise variance.
    pub fn with_substation_noise_var(&self, r0: f64) -> Result<Self> {
        Self::new(self.mean.clone(), self.covariance.clone(), r0, self.customer_bound)
    }

    pub fn with_customer_bound(&self, delta: f64) -> Result<Self> {
        Self::new(
            self.mean.clone(),
            self.covariance.clone(),
            self.substation_noise_var,
            delta,
        )
    }

    pub fn moments(&self) -> DerivedMoments {
        let p_row = self.covariance.row_sums();
        DerivedMoments {
            m0: self.mean.iter().sum(),
            p0: p_row.iter().sum(),
            p_row,
        }
    }

    /// `P0 + R0`, the variance of the substation reading.
    pub fn substation_variance(&self) -> f64 {
        self.moments().p0 + self.substation_noise_var
    }
}

/// Aggregate prior moments: `m0 = sum(m)`, `p0 = 1^T P 1` and `p_row = P 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedMoments {
    pub m0: f64,
    pub p0: f64,
    pub p_row: Vec<f64>,
}

/// One draw of the loads together with the line currents they induce.
///
/// `currents[j]` is the current downstream of the `j`th section: `currents[0]` is the
/// substation current and `currents[N]` is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadRealization {
    pub loads: Vec<f64>,
    pub currents: Vec<f64>,
}

impl LoadRealization {
    pub fn from_loads(loads: Vec<f64>) -> Self {
        let n = loads.len();
        let mut currents = vec![0.0; n + 1];
        for j in (0..n).rev() {
            currents[j] = currents[j + 1] + loads[j];
        }
        Self { loads, currents }
    }

    pub fn total(&self) -> f64 {
        self.currents[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub z0: f64,
    pub z: Vec<f64>,
    pub noise_scales: Vec<f64>,
}

impl MeasurementSet {
    pub fn new(z0: f64, z: Vec<f64>, noise_scales: Vec<f64>) -> Result<Self> {
        if z.len() != noise_scales.len() {
            return Err(Error::DimensionMismatch {
                expected: z.len(),
                found: noise_scales.len(),
            });
        }
        check_scales(&noise_scales)?;
        Ok(Self { z0, z, noise_scales })
    }
}

fn check_scales(scales: &[f64]) -> Result<()> {
    match scales.iter().position(|b| !(*b > 0.0)) {
        Some(j) => invalid(format!(
            "Laplace scale at location {} must be > 0, got {}",
            j + 1,
            scales[j]
        )),
        None => Ok(()),
    }
}

/// Draws `L ~ N(m, P)` as `m + C xi` with `P = C C^T` and `xi` standard normal.
pub fn sample_loads_with<R: Rng + ?Sized>(model: &FeederModel, rng: &mut R) -> LoadRealization {
    let n = model.n_locations();
    let mut xi = vec![0.0; n];
    let mut loads = vec![0.0; n];
    draw_loads_into(model, rng, &mut xi, &mut loads);
    LoadRealization::from_loads(loads)
}

/// Allocation-free load draw used in Monte Carlo loops.
pub(crate) fn draw_loads_into<R: Rng + ?Sized>(model: &FeederModel, rng: &mut R, xi: &mut [f64], loads: &mut [f64]) {
    for v in xi.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    model.chol.lower_mul_into(xi, loads);
    for (l, m) in loads.iter_mut().zip(&model.mean) {
        *l += m;
    }
}

pub fn sample_loads(model: &FeederModel, rng_seed: u64) -> LoadRealization {
    sample_loads_with(model, &mut rng_from_seed(rng_seed))
}

/// Laplace(0, b) by inverse CDF: `-b sign(u) ln(1 - 2|u|)` with `u` uniform on `(-1/2, 1/2)`.
#[inline]
pub fn sample_laplace<R: Rng + ?Sized>(rng: &mut R, b: f64) -> f64 {
    let open: f64 = rng.sample(Open01);
    let u = open - 0.5;
    -b * u.signum() * libm::log1p(-2.0 * u.abs())
}

/// Draws `Z0 = sum(L) + N(0, R0)` and `Zj = Lj + Lap(bj)`.
pub fn sample_measurements_with<R: Rng + ?Sized>(
    model: &FeederModel,
    loads: &LoadRealization,
    scales: &[f64],
    rng: &mut R,
) -> Result<MeasurementSet> {
    let n = model.n_locations();
    if scales.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: scales.len(),
        });
    }
    if loads.loads.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: loads.loads.len(),
        });
    }
    check_scales(scales)?;
    let z0 = loads.total() + substation_noise(model, rng);
    let z = loads
        .loads
        .iter()
        .zip(scales)
        .map(|(l, &b)| l + sample_laplace(rng, b))
        .collect();
    Ok(MeasurementSet {
        z0,
        z,
        noise_scales: scales.to_vec(),
    })
}

#[inline]
pub(crate) fn substation_noise<R: Rng + ?Sized>(model: &FeederModel, rng: &mut R) -> f64 {
    let g: f64 = rng.sample(StandardNormal);
    libm::sqrt(model.substation_noise_var) * g
}

pub fn sample_measurements(
    model: &FeederModel,
    loads: &LoadRealization,
    scales: &[f64],
    rng_seed: u64,
) -> Result<MeasurementSet> {
    sample_measurements_with(model, loads, scales, &mut rng_from_seed(rng_seed))
}
