//! Maximum a posteriori load estimate under Laplacian meter noise.
//!
//! The MAP estimate minimizes
//!
//! ```text
//! F(l) = (z0 − 1ᵀl)² / (2σ0²) + ½ ||P^{-1/2}(l − m)||² + Σj wj |zj − lj|
//! ```
//!
//! with `wj = 1/bj`. The first two terms are a smooth strongly convex quadratic `f`; the
//! last is separable, so its proximal map is soft-thresholding centred at `z`. The solver
//! is monotone FISTA with function-value restart, started at the base MMSE estimate.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::estimators::BaseMmse;
use crate::feeder::{FeederModel, MeasurementSet};
use crate::linalg::dot;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapOptions {
    /// Bound on the KKT residual (infinity norm of the minimal subgradient).
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MapOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapProblem<'a> {
    model: &'a FeederModel,
    z0: f64,
    z: Vec<f64>,
    l1_weights: Vec<f64>,
}

impl<'a> MapProblem<'a> {
    pub fn new(model: &'a FeederModel, z0: f64, z: Vec<f64>, l1_weights: Vec<f64>) -> Result<Self> {
        let n = model.n_locations();
        for len in [z.len(), l1_weights.len()] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: len,
                });
            }
        }
        if let Some(j) = l1_weights.iter().position(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "L1 weight at location {} must be finite and > 0, got {}",
                j + 1,
                l1_weights[j]
            )));
        }
        if !(model.substation_noise_var() > 0.0) {
            return Err(Error::InvalidArgument(
                "MAP estimation needs a noisy substation meter (R0 > 0)".into(),
            ));
        }
        Ok(Self {
            model,
            z0,
            z,
            l1_weights,
        })
    }

    /// Weights `1/bj` from the Laplace scales of a measurement set.
    pub fn from_measurements(model: &'a FeederModel, meas: &MeasurementSet) -> Result<Self> {
        let w = meas.noise_scales.iter().map(|b| 1.0 / b).collect();
        Self::new(model, meas.z0, meas.z.clone(), w)
    }

    pub fn model(&self) -> &FeederModel {
        self.model
    }

    pub fn z0(&self) -> f64 {
        self.z0
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn l1_weights(&self) -> &[f64] {
        &self.l1_weights
    }

    /// Same problem with different meter readings.
    pub fn set_readings(&mut self, z0: f64, z: &[f64]) {
        self.z0 = z0;
        self.z.copy_from_slice(z);
    }

    fn inv_r0(&self) -> f64 {
        1.0 / self.model.substation_noise_var()
    }

    fn smooth_value(&self, l: &[f64], scratch: &mut [f64]) -> f64 {
        let r = self.z0 - l.iter().sum::<f64>();
        for ((s, li), mi) in scratch.iter_mut().zip(l).zip(self.model.mean()) {
            *s = li - mi;
        }
        self.model.cholesky().solve_lower_in_place(scratch);
        0.5 * r * r * self.inv_r0() + 0.5 * dot(scratch, scratch)
    }

    fn l1_value(&self, l: &[f64]) -> f64 {
        l.iter()
            .zip(&self.z)
            .zip(&self.l1_weights)
            .map(|((li, zi), w)| w * (zi - li).abs())
            .sum()
    }

    fn value(&self, l: &[f64], scratch: &mut [f64]) -> f64 {
        self.smooth_value(l, scratch) + self.l1_value(l)
    }

    /// `∇f(l) = (1ᵀl − z0)/σ0² · 1 + P⁻¹(l − m)`
    fn gradient_into(&self, l: &[f64], out: &mut [f64]) {
        let c = (l.iter().sum::<f64>() - self.z0) * self.inv_r0();
        for ((o, li), mi) in out.iter_mut().zip(l).zip(self.model.mean()) {
            *o = li - mi;
        }
        self.model.cholesky().solve_in_place(out);
        for o in out.iter_mut() {
            *o += c;
        }
    }

    /// Upper bound on the Lipschitz constant of `∇f`: `N/σ0² + trace(P⁻¹)`.
    pub fn lipschitz_bound(&self) -> f64 {
        self.model.n_locations() as f64 * self.inv_r0() + self.model.cholesky().inverse_trace()
    }

    /// Infinity norm of the minimal-norm element of `∂F(l)`.
    pub fn kkt_residual(&self, l: &[f64]) -> f64 {
        let mut g = vec![0.0; l.len()];
        self.gradient_into(l, &mut g);
        self.kkt_from_gradient(l, &g)
    }

    fn kkt_from_gradient(&self, l: &[f64], g: &[f64]) -> f64 {
        let mut worst = 0.0_f64;
        for j in 0..l.len() {
            let w = self.l1_weights[j];
            let d = l[j] - self.z[j];
            let r = if d == 0.0 {
                (g[j].abs() - w).max(0.0)
            } else {
                (g[j] + w * d.signum()).abs()
            };
            worst = worst.max(r);
        }
        worst
    }
}

/// Objective value at `l`. The prior term costs one triangular solve against the
/// Cholesky factor of `P`.
pub fn map_objective(problem: &MapProblem<'_>, l: &[f64]) -> Result<f64> {
    let n = problem.model.n_locations();
    if l.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: l.len(),
        });
    }
    let mut scratch = vec![0.0; n];
    Ok(problem.value(l, &mut scratch))
}

/// `soft_threshold(x, t) = sign(x) max(|x| − t, 0)`
#[inline]
pub fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Proximal map of `step · Σ wj |zj − lj|` at `v`.
#[inline]
fn prox_into(v: &[f64], z: &[f64], w: &[f64], step: f64, out: &mut [f64]) {
    for j in 0..v.len() {
        out[j] = z[j] + soft_threshold(v[j] - z[j], step * w[j]);
    }
}

/// One-dimensional reference: `argmin ½a(l − c)² + w|z − l| = c − clamp(c − z, −w/a, w/a)`.
pub fn prox_scalar(a: f64, c: f64, w: f64, z: f64) -> f64 {
    z + soft_threshold(c - z, w / a)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapSolution {
    pub point: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
}

/// Reusable buffers so repeated solves do not allocate.
#[derive(Debug, Clone)]
pub struct MapWorkspace {
    x: Vec<f64>,
    x_prev: Vec<f64>,
    y: Vec<f64>,
    cand: Vec<f64>,
    grad: Vec<f64>,
    scratch: Vec<f64>,
}

impl MapWorkspace {
    pub fn new(n: usize) -> Self {
        Self {
            x: vec![0.0; n],
            x_prev: vec![0.0; n],
            y: vec![0.0; n],
            cand: vec![0.0; n],
            grad: vec![0.0; n],
            scratch: vec![0.0; n],
        }
    }
}

/// Solves the MAP problem from the base MMSE estimate.
///
/// Exceeding `max_iter` is not an error: the result has `converged == false` and carries
/// the last iterate and its KKT residual.
pub fn solve_map(problem: &MapProblem<'_>, options: MapOptions) -> Result<MapSolution> {
    let base = BaseMmse::new(problem.model)?;
    let start = base.estimate(problem.z0);
    let mut ws = MapWorkspace::new(problem.model.n_locations());
    solve_map_from(problem, &start, options, &mut ws)
}

pub fn solve_map_from(
    problem: &MapProblem<'_>,
    start: &[f64],
    options: MapOptions,
    ws: &mut MapWorkspace,
) -> Result<MapSolution> {
    let n = problem.model.n_locations();
    if start.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: start.len(),
        });
    }
    if !(options.tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be > 0, got {}",
            options.tol
        )));
    }
    let step = 1.0 / problem.lipschitz_bound();
    let (z, w) = (&problem.z, &problem.l1_weights);

    ws.x.copy_from_slice(start);
    ws.y.copy_from_slice(start);
    let mut fx = problem.value(&ws.x, &mut ws.scratch);
    problem.gradient_into(&ws.x, &mut ws.grad);
    let mut kkt = problem.kkt_from_gradient(&ws.x, &ws.grad);
    let mut t = 1.0_f64;
    // true while y == x, i.e. the next step is a plain proximal-gradient step
    let mut plain = true;
    let mut iterations = 0;

    while kkt > options.tol && iterations < options.max_iter {
        iterations += 1;
        problem.gradient_into(&ws.y, &mut ws.grad);
        for j in 0..n {
            ws.scratch[j] = ws.y[j] - step * ws.grad[j];
        }
        prox_into(&ws.scratch, z, w, step, &mut ws.cand);
        let fc = problem.value(&ws.cand, &mut ws.scratch);

        // A plain step with step size 1/L never increases F in exact arithmetic; if it
        // appears to, the difference is rounding and the step is taken anyway.
        if fc <= fx || plain {
            debug_assert!(fc <= fx + 1e-12 * (1.0 + fx.abs()));
            ws.x_prev.copy_from_slice(&ws.x);
            ws.x.copy_from_slice(&ws.cand);
            fx = fc;
            let t_next = 0.5 * (1.0 + libm::sqrt(1.0 + 4.0 * t * t));
            let b = (t - 1.0) / t_next;
            for j in 0..n {
                ws.y[j] = ws.x[j] + b * (ws.x[j] - ws.x_prev[j]);
            }
            t = t_next;
            plain = b == 0.0;
        } else {
            // momentum overshot: restart from the best point
            ws.y.copy_from_slice(&ws.x);
            t = 1.0;
            plain = true;
        }

        problem.gradient_into(&ws.x, &mut ws.grad);
        kkt = problem.kkt_from_gradient(&ws.x, &ws.grad);
    }

    Ok(MapSolution {
        point: ws.x.clone(),
        objective: fx,
        iterations,
        converged: kkt <= options.tol,
        kkt_residual: kkt,
    })
}

/// L1 weight used to approximate the Gaussian limit `bj → ∞`.
pub const GAUSSIAN_LIMIT_WEIGHT: f64 = 1e-8;

/// Does the MAP estimate with vanishing L1 weights reproduce the base MMSE estimate?
///
/// True iff `||MAP − base||∞ <= tol (1 + ||m||∞)`. Solver failures count as false.
pub fn map_matches_lmmse_in_gaussian_limit(model: &FeederModel, meas: &MeasurementSet, tol: f64) -> bool {
    let n = model.n_locations();
    let Ok(problem) = MapProblem::new(model, meas.z0, meas.z.clone(), vec![GAUSSIAN_LIMIT_WEIGHT; n]) else {
        return false;
    };
    let Ok(sol) = solve_map(&problem, MapOptions::default()) else {
        return false;
    };
    let Ok(base) = BaseMmse::new(model) else {
        return false;
    };
    let target = base.estimate(meas.z0);
    let scale = 1.0 + model.mean().iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let gap = sol
        .point
        .iter()
        .zip(&target)
        .fold(0.0_f64, |a, (x, y)| a.max((x - y).abs()));
    gap <= tol * scale
}
