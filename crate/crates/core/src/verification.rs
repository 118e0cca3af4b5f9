//! Monte Carlo and analytic oracles for the estimators and mechanisms.
//!
//! A Monte Carlo experiment is split over `workers` independent streams. Worker `w` seeds
//! its generator with `root_seed ^ (w * 0x9E37_79B9_7F4A_7C15)` and runs a fixed share of
//! the trials; partial sums are merged in worker order. The result therefore depends on
//! `(root_seed, workers, trials)` only, whether the workers run sequentially (as here) or
//! on separate threads (see [`Experiment::run_worker`]).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{invalid, Result};
use crate::estimators::{BaseMmse, EstimatorTag, LmmseFull, NoiseVariances, ReducedLmmse};
use crate::feeder::{draw_loads_into, rng_from_seed, sample_laplace, substation_noise, FeederModel};
use crate::linalg::Matrix;
use crate::map::{solve_map_from, MapOptions, MapProblem, MapWorkspace};
use crate::privacy::{gaussian_sigma_for, inverse_q, laplace_dp_ratio_check, laplace_scale_for, ratio_within};
use crate::special::normal_tail;

/// Odd multiplier of the seed-splitting rule.
pub const SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

/// Below this many trials, statistical checks are reported as inconclusive.
pub const MIN_CONCLUSIVE_TRIALS: usize = 30;

pub fn worker_seed(root_seed: u64, worker: usize) -> u64 {
    root_seed ^ (worker as u64).wrapping_mul(SEED_STRIDE)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McConfig {
    pub trials: usize,
    pub root_seed: u64,
    pub workers: usize,
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return invalid("trials must be >= 1");
        }
        if self.workers == 0 {
            return invalid("workers must be >= 1");
        }
        Ok(())
    }

    /// Trials assigned to worker `w`: an even split, remainder to the first workers.
    pub fn trials_for(&self, worker: usize) -> usize {
        let base = self.trials / self.workers;
        base + usize::from(worker < self.trials % self.workers)
    }
}

/// Which estimators a Monte Carlo experiment runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorSelection {
    pub base: bool,
    pub lmmse_full: bool,
    pub lmmse_reduced: bool,
    pub map: Option<MapOptions>,
    /// Adds a reduced estimator with every gain shifted by this amount.
    pub perturbed_gain: Option<f64>,
}

impl EstimatorSelection {
    pub fn linear() -> Self {
        Self {
            base: true,
            lmmse_full: true,
            lmmse_reduced: true,
            map: None,
            perturbed_gain: None,
        }
    }

    pub fn all() -> Self {
        Self {
            map: Some(MapOptions::default()),
            ..Self::linear()
        }
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn merge(&mut self, other: &Self) {
        self.add(other.sum);
        self.add(other.comp);
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Power sums of the estimation errors at every location.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorAccumulator {
    count: usize,
    e1: Vec<CompensatedSum>,
    e2: Vec<CompensatedSum>,
    e4: Vec<CompensatedSum>,
}

impl ErrorAccumulator {
    fn new(n: usize) -> Self {
        Self {
            count: 0,
            e1: vec![CompensatedSum::default(); n],
            e2: vec![CompensatedSum::default(); n],
            e4: vec![CompensatedSum::default(); n],
        }
    }

    #[inline]
    fn push(&mut self, estimate: &[f64], truth: &[f64]) {
        self.count += 1;
        for j in 0..truth.len() {
            let e = estimate[j] - truth[j];
            let e2 = e * e;
            self.e1[j].add(e);
            self.e2[j].add(e2);
            self.e4[j].add(e2 * e2);
        }
    }

    fn merge(&mut self, other: &Self) {
        self.count += other.count;
        for j in 0..self.e1.len() {
            self.e1[j].merge(&other.e1[j]);
            self.e2[j].merge(&other.e2[j]);
            self.e4[j].merge(&other.e4[j]);
        }
    }
}

/// Label of an accumulated estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StatsLabel {
    Estimator(EstimatorTag),
    /// Reduced LMMSE with gains shifted by the given offset.
    PerturbedReduced(f64),
}

impl core::fmt::Display for StatsLabel {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            StatsLabel::Estimator(t) => write!(f, "{t}"),
            StatsLabel::PerturbedReduced(o) => write!(f, "lmmse-reduced{o:+}"),
        }
    }
}

/// One worker's partial sums.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerResult {
    accumulators: Vec<ErrorAccumulator>,
    map_nonconverged: usize,
}

/// Precomputed estimators for a Monte Carlo experiment.
#[derive(Debug, Clone)]
pub struct Experiment<'a> {
    model: &'a FeederModel,
    scales: Vec<f64>,
    selection: EstimatorSelection,
    base: BaseMmse,
    full: Option<LmmseFull>,
    reduced: Option<ReducedLmmse>,
    perturbed: Option<ReducedLmmse>,
    labels: Vec<StatsLabel>,
    analytic: Vec<Option<Vec<f64>>>,
}

impl<'a> Experiment<'a> {
    pub fn new(model: &'a FeederModel, scales: &[f64], selection: EstimatorSelection) -> Result<Self> {
        let noise = NoiseVariances::from_laplace_scales(scales)?;
        if scales.len() != model.n_locations() {
            return Err(crate::Error::DimensionMismatch {
                expected: model.n_locations(),
                found: scales.len(),
            });
        }
        if let Some(j) = scales.iter().position(|b| !(*b > 0.0)) {
            return invalid(format!("Laplace scale at location {} must be > 0", j + 1));
        }
        let base = BaseMmse::new(model)?;
        let full = if selection.lmmse_full {
            Some(LmmseFull::new(model, &noise)?)
        } else {
            None
        };
        let reduced_needed = selection.lmmse_reduced || selection.perturbed_gain.is_some();
        let reduced = if reduced_needed {
            Some(ReducedLmmse::new(model, &noise)?)
        } else {
            None
        };
        let perturbed = match (selection.perturbed_gain, &reduced) {
            (Some(off), Some(r)) => Some(r.with_gain_offset(off)),
            _ => None,
        };
        if selection.map.is_some() {
            // validates R0 > 0 up front
            MapProblem::new(
                model,
                0.0,
                vec![0.0; scales.len()],
                scales.iter().map(|b| 1.0 / b).collect(),
            )?;
        }

        let mut labels = Vec::new();
        let mut analytic = Vec::new();
        if selection.base {
            labels.push(StatsLabel::Estimator(EstimatorTag::BaseMmse));
            analytic.push(Some(base.accuracy().to_vec()));
        }
        if let Some(f) = &full {
            labels.push(StatsLabel::Estimator(EstimatorTag::LmmseFull));
            analytic.push(Some(f.accuracy().to_vec()));
        }
        if let (true, Some(r)) = (selection.lmmse_reduced, &reduced) {
            labels.push(StatsLabel::Estimator(EstimatorTag::LmmseReduced));
            analytic.push(Some(r.accuracy()));
        }
        if selection.map.is_some() {
            labels.push(StatsLabel::Estimator(EstimatorTag::Map));
            analytic.push(None);
        }
        if let (Some(off), Some(r)) = (selection.perturbed_gain, &reduced) {
            labels.push(StatsLabel::PerturbedReduced(off));
            // compared against the optimal reduced accuracy
            analytic.push(Some(r.accuracy()));
        }
        Ok(Self {
            model,
            scales: scales.to_vec(),
            selection,
            base,
            full,
            reduced,
            perturbed,
            labels,
            analytic,
        })
    }

    pub fn labels(&self) -> &[StatsLabel] {
        &self.labels
    }

    /// Runs worker `worker`'s share of the trials. Independent of every other worker.
    pub fn run_worker(&self, mc: &McConfig, worker: usize) -> WorkerResult {
        let n = self.model.n_locations();
        let mut rng = rng_from_seed(worker_seed(mc.root_seed, worker));
        let mut accs: Vec<ErrorAccumulator> = self.labels.iter().map(|_| ErrorAccumulator::new(n)).collect();
        let (mut xi, mut loads, mut z) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let (mut est, mut base_est) = (vec![0.0; n], vec![0.0; n]);
        let mut innov = vec![0.0; n + 1];
        let weights: Vec<f64> = self.scales.iter().map(|b| 1.0 / b).collect();
        let mut map_problem = self
            .selection
            .map
            .map(|_| MapProblem::new(self.model, 0.0, vec![0.0; n], weights.clone()).expect("validated in new"));
        let mut map_ws = MapWorkspace::new(n);
        let mut map_nonconverged = 0;

        for _ in 0..mc.trials_for(worker) {
            draw_loads_into(self.model, &mut rng, &mut xi, &mut loads);
            let z0 = loads.iter().sum::<f64>() + substation_noise(self.model, &mut rng);
            for j in 0..n {
                z[j] = loads[j] + sample_laplace(&mut rng, self.scales[j]);
            }

            let mut slot = 0;
            self.base.estimate_into(z0, &mut base_est);
            if self.selection.base {
                accs[slot].push(&base_est, &loads);
                slot += 1;
            }
            if let Some(f) = &self.full {
                f.estimate_into(z0, &z, &mut innov, &mut est);
                accs[slot].push(&est, &loads);
                slot += 1;
            }
            if let (true, Some(r)) = (self.selection.lmmse_reduced, &self.reduced) {
                r.estimate_into(z0, &z, &mut est);
                accs[slot].push(&est, &loads);
                slot += 1;
            }
            if let (Some(opts), Some(problem)) = (self.selection.map, map_problem.as_mut()) {
                problem.set_readings(z0, &z);
                match solve_map_from(problem, &base_est, opts, &mut map_ws) {
                    Ok(sol) if sol.converged => accs[slot].push(&sol.point, &loads),
                    _ => map_nonconverged += 1,
                }
                slot += 1;
            }
            if let Some(p) = &self.perturbed {
                p.estimate_into(z0, &z, &mut est);
                accs[slot].push(&est, &loads);
            }
        }
        WorkerResult {
            accumulators: accs,
            map_nonconverged,
        }
    }

    /// Merges worker results (in worker order) into a report.
    pub fn report(&self, mc: &McConfig, results: &[WorkerResult]) -> McReport {
        let n = self.model.n_locations();
        let mut merged: Vec<ErrorAccumulator> = self.labels.iter().map(|_| ErrorAccumulator::new(n)).collect();
        let mut map_nonconverged = 0;
        for r in results {
            for (m, a) in merged.iter_mut().zip(&r.accumulators) {
                m.merge(a);
            }
            map_nonconverged += r.map_nonconverged;
        }
        let stats = merged
            .iter()
            .zip(&self.labels)
            .zip(&self.analytic)
            .map(|((acc, label), analytic)| EstimatorStats::from_accumulator(*label, acc, analytic.clone()))
            .collect();
        McReport {
            config: *mc,
            stats,
            map_nonconverged,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorStats {
    pub label: StatsLabel,
    pub trials_used: usize,
    /// Empirical mean squared error per location.
    pub mse: Vec<f64>,
    /// Standard error of `mse`; infinite with fewer than two trials.
    pub mse_se: Vec<f64>,
    pub mean_error: Vec<f64>,
    pub mean_error_se: Vec<f64>,
    pub analytic: Option<Vec<f64>>,
    /// `(mse − analytic) / analytic`
    pub rel_error: Option<Vec<f64>>,
}

impl EstimatorStats {
    fn from_accumulator(label: StatsLabel, acc: &ErrorAccumulator, analytic: Option<Vec<f64>>) -> Self {
        let count = acc.count;
        let nf = count as f64;
        let n = acc.e1.len();
        let (mut mse, mut mse_se, mut mean_error, mut mean_error_se) =
            (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for j in 0..n {
            if count == 0 {
                mse[j] = f64::NAN;
                mean_error[j] = f64::NAN;
                mse_se[j] = f64::INFINITY;
                mean_error_se[j] = f64::INFINITY;
                continue;
            }
            let s1 = acc.e1[j].value();
            let s2 = acc.e2[j].value();
            let s4 = acc.e4[j].value();
            mse[j] = s2 / nf;
            mean_error[j] = s1 / nf;
            if count < 2 {
                mse_se[j] = f64::INFINITY;
                mean_error_se[j] = f64::INFINITY;
            } else {
                let var_sq = ((s4 - nf * mse[j] * mse[j]) / (nf - 1.0)).max(0.0);
                let var_e = ((s2 - nf * mean_error[j] * mean_error[j]) / (nf - 1.0)).max(0.0);
                mse_se[j] = libm::sqrt(var_sq / nf);
                mean_error_se[j] = libm::sqrt(var_e / nf);
            }
        }
        let rel_error = analytic
            .as_ref()
            .map(|a| mse.iter().zip(a).map(|(e, q)| (e - q) / q).collect());
        Self {
            label,
            trials_used: count,
            mse,
            mse_se,
            mean_error,
            mean_error_se,
            analytic,
            rel_error,
        }
    }

    /// Is the empirical MSE within `k` standard errors of the analytic value everywhere?
    pub fn within_se(&self, k: f64) -> Option<bool> {
        let a = self.analytic.as_ref()?;
        Some(
            self.mse
                .iter()
                .zip(a)
                .zip(&self.mse_se)
                .all(|((e, q), se)| (e - q).abs() <= k * se),
        )
    }

    /// Is the mean error within `k` standard errors of zero everywhere?
    pub fn unbiased_within_se(&self, k: f64) -> bool {
        self.mean_error
            .iter()
            .zip(&self.mean_error_se)
            .all(|(m, se)| m.abs() <= k * se)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    pub config: McConfig,
    pub stats: Vec<EstimatorStats>,
    /// MAP trials excluded because the solver did not converge.
    pub map_nonconverged: usize,
}

impl McReport {
    pub fn get(&self, label: StatsLabel) -> Option<&EstimatorStats> {
        self.stats.iter().find(|s| s.label == label)
    }

    pub fn estimator(&self, tag: EstimatorTag) -> Option<&EstimatorStats> {
        self.get(StatsLabel::Estimator(tag))
    }
}

/// Samples loads and measurements, runs the selected estimators and compares their
/// empirical errors with the analytic accuracies. Workers run one after another.
pub fn run_mse_experiment(
    model: &FeederModel,
    scales: &[f64],
    mc: &McConfig,
    selection: EstimatorSelection,
) -> Result<McReport> {
    mc.validate()?;
    let exp = Experiment::new(model, scales, selection)?;
    let results: Vec<WorkerResult> = (0..mc.workers).map(|w| exp.run_worker(mc, w)).collect();
    Ok(exp.report(mc, &results))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    Inconclusive,
    /// Reported for information only; never affects the outcome.
    Info,
}

impl CheckStatus {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Inconclusive => "inconclusive",
            CheckStatus::Info => "info",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub status: CheckStatus,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, status: CheckStatus, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            status,
            detail: detail.into(),
        }
    }
}

/// Absolute residual required of [`inverse_q`].
pub const INVERSE_Q_RESIDUAL: f64 = 1e-12;

/// Evaluation points for the Laplace density-ratio check at scale `b`.
pub fn ratio_grid(b: f64) -> Vec<f64> {
    (-200..=200).map(|i| f64::from(i) * 0.05 * b).collect()
}

/// Mechanism checks over the given grids.
///
/// `scale_factor` multiplies every calibrated Laplace scale; `1.0` is the correct
/// calibration, anything below it should make the ratio checks fail. Each ε also gets a
/// negative control that passes only when `0.9 b` is caught.
pub fn run_dp_checks(
    delta_grid: &[f64],
    epsilon_grid: &[f64],
    sensitivity: f64,
    scale_factor: f64,
) -> Result<Vec<Check>> {
    if delta_grid.is_empty() || epsilon_grid.is_empty() {
        return invalid("privacy check grids must be nonempty");
    }
    let mut checks = Vec::new();
    for &eps in epsilon_grid {
        let b = laplace_scale_for(eps, sensitivity)?;
        let used = b * scale_factor;
        let ratio = laplace_dp_ratio_check(used, sensitivity, &ratio_grid(used))?;
        checks.push(Check::new(
            format!("dp.laplace_ratio[eps={eps}]"),
            CheckStatus::from_bool(ratio_within(ratio, eps)),
            format!("b={used} max log-ratio={ratio} bound={eps}"),
        ));
        let small = 0.9 * b;
        let ratio = laplace_dp_ratio_check(small, sensitivity, &ratio_grid(small))?;
        checks.push(Check::new(
            format!("dp.laplace_negative_control[eps={eps}]"),
            CheckStatus::from_bool(!ratio_within(ratio, eps)),
            format!("b={small} max log-ratio={ratio} must exceed {eps}"),
        ));
    }
    for &delta in delta_grid {
        let k = inverse_q(delta)?;
        let residual = (normal_tail(k) - delta).abs();
        checks.push(Check::new(
            format!("dp.inverse_q_residual[delta={delta}]"),
            CheckStatus::from_bool(residual <= INVERSE_Q_RESIDUAL),
            format!("K={k} |Q(K)-delta|={residual:e}"),
        ));
    }
    let mut eps_sorted = epsilon_grid.to_vec();
    eps_sorted.sort_by(f64::total_cmp);
    eps_sorted.dedup();
    let mut delta_sorted = delta_grid.to_vec();
    delta_sorted.sort_by(f64::total_cmp);
    delta_sorted.dedup();
    let mut monotone = true;
    for &d in &delta_sorted {
        let sig: Vec<f64> = eps_sorted
            .iter()
            .map(|&e| gaussian_sigma_for(e, d, sensitivity))
            .collect::<Result<_>>()?;
        monotone &= sig.windows(2).all(|w| w[1] < w[0]);
    }
    for &e in &eps_sorted {
        let sig: Vec<f64> = delta_sorted
            .iter()
            .map(|&d| gaussian_sigma_for(e, d, sensitivity))
            .collect::<Result<_>>()?;
        monotone &= sig.windows(2).all(|w| w[1] < w[0]);
    }
    checks.push(Check::new(
        "dp.gaussian_sigma_monotone",
        CheckStatus::from_bool(monotone),
        format!("{} epsilons x {} deltas", eps_sorted.len(), delta_sorted.len()),
    ));
    Ok(checks)
}

/// Relative tolerance of the fusion-gain identity `Kj = (Qj⁰ − Qj^{0,j}) / Qj⁰`.
pub const GAIN_IDENTITY_TOL: f64 = 1e-12;
/// Absolute tolerance between the restricted full LMMSE and the reduced LMMSE.
pub const RESTRICTED_TOL: f64 = 1e-10;
/// Standard errors allowed between an empirical MSE and its closed form.
pub const MSE_SE_BOUND: f64 = 3.0;

fn rel_diff(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Closed-form checks on one model: accuracy ordering, gain bounds and identity, and
/// agreement of the full LMMSE restricted to `(Z0, Zj)` with the reduced estimator.
pub fn analytic_estimator_checks(model: &FeederModel, noise: &NoiseVariances) -> Result<Vec<Check>> {
    let n = model.n_locations();
    let mut checks = Vec::new();
    match crate::estimators::accuracy_ordering_check(model, noise) {
        Ok(_) => checks.push(Check::new(
            "estimators.accuracy_ordering",
            CheckStatus::Pass,
            format!(
                "full <= reduced <= base at all {n} locations (slack {:e})",
                crate::estimators::ORDERING_SLACK
            ),
        )),
        Err(e @ crate::Error::OrderingViolation { .. }) => checks.push(Check::new(
            "estimators.accuracy_ordering",
            CheckStatus::Fail,
            format!("{e}"),
        )),
        Err(e) => return Err(e),
    }

    let reduced = ReducedLmmse::new(model, noise)?;
    let base = BaseMmse::new(model)?;
    let gains = reduced.gains();
    let acc = reduced.accuracy();
    let in_unit = gains.iter().all(|k| (0.0..=1.0).contains(k));
    checks.push(Check::new(
        "estimators.gain_bounds",
        CheckStatus::from_bool(in_unit),
        format!("gains {gains:?}"),
    ));
    let worst_identity = (0..n)
        .map(|j| {
            let q0 = base.accuracy()[j];
            rel_diff(gains[j], (q0 - acc[j]) / q0)
        })
        .fold(0.0, f64::max);
    checks.push(Check::new(
        "estimators.gain_identity",
        CheckStatus::from_bool(worst_identity <= GAIN_IDENTITY_TOL),
        format!("max relative deviation {worst_identity:e} (bound {GAIN_IDENTITY_TOL:e})"),
    ));

    let mut worst = 0.0_f64;
    for j in 0..n {
        let restricted = LmmseFull::with_meters(model, noise, &[j])?;
        worst = worst.max((restricted.accuracy()[j] - acc[j]).abs());
        // gain on Z0 and on Zj, against the reduced form m + Kj(zj - mj) + (1 - Kj)(base point - mj)
        let g = restricted.gain();
        let base_gain = model.moments().p_row[j] / (model.moments().p0 + model.substation_noise_var());
        worst = worst.max((g[(j, 1)] - gains[j]).abs());
        worst = worst.max((g[(j, 0)] - (1.0 - gains[j]) * base_gain).abs());
    }
    checks.push(Check::new(
        "estimators.restricted_full_equals_reduced",
        CheckStatus::from_bool(worst <= RESTRICTED_TOL),
        format!("max abs deviation {worst:e} (bound {RESTRICTED_TOL:e})"),
    ));
    Ok(checks)
}

/// Statistical checks on a Monte Carlo report.
///
/// MSE-versus-closed-form, empirical ordering and the perturbed-gain control are
/// asserted (inconclusive below [`MIN_CONCLUSIVE_TRIALS`]); the MAP comparison with the
/// full LMMSE is informational only.
pub fn mc_checks(report: &McReport) -> Vec<Check> {
    let conclusive = report.config.trials >= MIN_CONCLUSIVE_TRIALS;
    let gate = |ok: bool| {
        if conclusive {
            CheckStatus::from_bool(ok)
        } else {
            CheckStatus::Inconclusive
        }
    };
    let mut checks = Vec::new();
    for st in &report.stats {
        let StatsLabel::Estimator(tag) = st.label else { continue };
        if let Some(ok) = st.within_se(MSE_SE_BOUND) {
            let worst = st
                .mse
                .iter()
                .zip(st.analytic.as_ref().into_iter().flatten())
                .zip(&st.mse_se)
                .map(|((e, q), se)| (e - q).abs() / se)
                .fold(0.0, f64::max);
            checks.push(Check::new(
                format!("mc.{tag}.mse_matches_accuracy"),
                gate(ok),
                format!("max |mse - Q| / se = {worst:.3} (bound {MSE_SE_BOUND})"),
            ));
        }
        checks.push(Check::new(
            format!("mc.{tag}.unbiased"),
            gate(st.unbiased_within_se(MSE_SE_BOUND + 1.0)),
            "mean error within 4 standard errors of zero",
        ));
    }

    let pairs = [
        (EstimatorTag::LmmseFull, EstimatorTag::LmmseReduced),
        (EstimatorTag::LmmseReduced, EstimatorTag::BaseMmse),
    ];
    for (better, worse) in pairs {
        if let (Some(a), Some(b)) = (report.estimator(better), report.estimator(worse)) {
            let ok = (0..a.mse.len()).all(|j| {
                let se = libm::sqrt(a.mse_se[j] * a.mse_se[j] + b.mse_se[j] * b.mse_se[j]);
                a.mse[j] <= b.mse[j] + MSE_SE_BOUND * se
            });
            checks.push(Check::new(
                format!("mc.ordering.{better}<={worse}"),
                gate(ok),
                format!("empirical MSE of {better} within {MSE_SE_BOUND} combined SE below {worse}"),
            ));
        }
    }

    for st in &report.stats {
        if let StatsLabel::PerturbedReduced(off) = st.label {
            let a = st
                .analytic
                .as_ref()
                .expect("perturbed estimator carries the optimal accuracy");
            let ok = (0..a.len()).all(|j| st.mse[j] > a[j] + MSE_SE_BOUND * st.mse_se[j]);
            checks.push(Check::new(
                format!("mc.negative_control.gain_offset[{off}]"),
                gate(ok),
                "shifted gains must give MSE above the optimal reduced accuracy",
            ));
        }
    }

    if let Some(map) = report.estimator(EstimatorTag::Map) {
        checks.push(Check::new(
            "mc.map.nonconverged",
            CheckStatus::Info,
            format!(
                "{} of {} trials excluded",
                report.map_nonconverged, report.config.trials
            ),
        ));
        if let Some(full) = report.estimator(EstimatorTag::LmmseFull) {
            let below = (0..map.mse.len())
                .filter(|&j| {
                    let se = libm::sqrt(map.mse_se[j] * map.mse_se[j] + full.mse_se[j] * full.mse_se[j]);
                    map.mse[j] <= full.mse[j] + MSE_SE_BOUND * se
                })
                .count();
            checks.push(Check::new(
                "mc.map_vs_lmmse_full",
                CheckStatus::Info,
                format!(
                    "MAP MSE within {MSE_SE_BOUND} SE of or below full LMMSE at {below} of {} locations",
                    map.mse.len()
                ),
            ));
        }
    }
    checks
}

/// Relative tolerance of the curvature identity and of the cross-module gain agreement.
pub const TRADEOFF_TOL: f64 = 1e-10;

/// Curvature identity along the configured grid and agreement of the trade-off curve with
/// the reduced estimator on a feeder realizing `(η, ζ)`.
pub fn tradeoff_checks(config: &crate::TradeoffConfig) -> Result<Vec<Check>> {
    use crate::tradeoff::{curvature_identity_check, k_of_epsilon, meter_noise_variance, uncorrelated_model_for};
    config.validate()?;
    let c = config;
    let mut worst_identity = 0.0_f64;
    for &eps in &c.epsilon_grid {
        let (lhs, rhs) = curvature_identity_check(c.eta, c.zeta, c.delta0, c.p0, c.r0, eps)?;
        worst_identity = worst_identity.max(rel_diff(lhs, rhs));
    }
    let tag = format!("eta={},zeta={}", c.eta, c.zeta);
    let mut checks = vec![Check::new(
        format!("tradeoff.curvature_identity[{tag}]"),
        CheckStatus::from_bool(worst_identity <= TRADEOFF_TOL),
        format!(
            "max relative deviation {worst_identity:e} over {} points",
            c.epsilon_grid.len()
        ),
    )];
    match uncorrelated_model_for(c.eta, c.zeta, c.p0, c.r0) {
        Ok(model) => {
            let mut worst = 0.0_f64;
            for &eps in &c.epsilon_grid {
                let rj = meter_noise_variance(model.customer_bound(), eps);
                let noise = NoiseVariances::new(vec![rj, 1.0])?;
                let gain = ReducedLmmse::new(&model, &noise)?.gains()[0];
                worst = worst.max(rel_diff(gain, k_of_epsilon(c.eta, c.zeta, eps)?.exact));
            }
            checks.push(Check::new(
                format!("tradeoff.matches_reduced_gain[{tag}]"),
                CheckStatus::from_bool(worst <= TRADEOFF_TOL),
                format!("max relative deviation {worst:e}"),
            ));
        }
        Err(e) => checks.push(Check::new(
            format!("tradeoff.matches_reduced_gain[{tag}]"),
            CheckStatus::Inconclusive,
            format!("no two-location feeder realizes these parameters: {e}"),
        )),
    }
    Ok(checks)
}

/// A random feeder with `1..=max_n` locations and per-location Laplace scales.
///
/// `P = A Aᵀ / n + diag(u)` with standard normal `A` and `u ~ U(0.1, 1)`; meter privacy
/// losses are drawn from `U(0.1, 2)`.
pub fn random_instance<R: Rng + ?Sized>(rng: &mut R, max_n: usize) -> Result<(FeederModel, Vec<f64>)> {
    let n = rng.random_range(1..=max_n.max(1));
    let a: Vec<f64> = (0..n * n).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
    let diag: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let p = Matrix::from_fn(n, n, |i, j| {
        let s: f64 = (0..n).map(|k| a[i * n + k] * a[j * n + k]).sum();
        s / n as f64 + if i == j { diag[i] } else { 0.0 }
    });
    let mean: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
    let r0 = rng.random_range(0.02..0.5);
    let delta = rng.random_range(0.05..0.5);
    let model = FeederModel::new(mean, p, r0, delta)?;
    let scales = (0..n)
        .map(|_| laplace_scale_for(rng.random_range(0.1..2.0), delta))
        .collect::<Result<Vec<_>>>()?;
    Ok((model, scales))
}
