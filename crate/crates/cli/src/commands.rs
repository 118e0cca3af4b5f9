//! The four subcommands. Each returns the text printed on stdout and writes its files
//! under the configured output directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use dpse_core::estimators::{BaseMmse, LmmseFull, ReducedLmmse};
use dpse_core::feeder::{sample_loads, sample_measurements};
use dpse_core::map::solve_map;
use dpse_core::privacy::{baseline_epsilon, compose};
use dpse_core::tradeoff::{sweep_figure_curves, Epsilon0Mode};
use dpse_core::verification::{
    analytic_estimator_checks, mc_checks, run_dp_checks, tradeoff_checks, worker_seed, Check, CheckStatus,
    EstimatorSelection, Experiment, McConfig, McReport, WorkerResult,
};
use dpse_core::{EstimatorTag, MapProblem, MeasurementSet, NoiseVariances, PrivacyBudget};
use serde::Serialize;

use crate::config::{Method, ScenarioConfig};
use crate::io::{self, CalibrationRow, EstimateRow, Readings, TradeoffRow};
use crate::CliError;

fn core_err(context: &str) -> impl Fn(dpse_core::Error) -> CliError + '_ {
    move |e| CliError::Config(format!("{context}: {e}"))
}

fn out_dir(cfg: &ScenarioConfig) -> Result<PathBuf, CliError> {
    let dir = cfg.output.dir.clone();
    io::ensure_dir(&dir)?;
    Ok(dir)
}

fn method_name(m: Method) -> String {
    m.to_possible_value()
        .map(|v| v.get_name().to_string())
        .unwrap_or_default()
}

/// Per-location Laplace scales, meter noise variances and composed budgets.
pub fn calibrate(cfg: &ScenarioConfig) -> Result<String, CliError> {
    let model = cfg.feeder_model()?;
    let delta0 = cfg.privacy_section()?.delta0;
    let eps = cfg.meter_epsilons(model.n_locations())?;
    let scales = cfg.laplace_scales(&model)?;
    let baseline = match baseline_epsilon(&model, delta0) {
        Ok(b) => Some(b),
        Err(dpse_core::Error::InfinitePrivacyLoss) => None,
        Err(e) => return Err(core_err("privacy.delta0")(e)),
    };

    let mut text = String::new();
    writeln!(
        text,
        "feeder: {} locations, customer bound {} A, substation noise variance {} A^2",
        model.n_locations(),
        model.customer_bound(),
        model.substation_noise_var()
    )
    .unwrap();
    let mut rows = Vec::new();
    match baseline {
        Some(b) => {
            writeln!(
                text,
                "baseline: delta0={delta0} K={} eps0_exact={} eps0_approx={}",
                b.k, b.exact, b.approx
            )
            .unwrap();
            let base = PrivacyBudget::new(b.exact, delta0).map_err(core_err("privacy.delta0"))?;
            for (j, (&e, &b)) in eps.iter().zip(&scales).enumerate() {
                let c = compose(base, e).map_err(core_err("privacy.meter_epsilon"))?;
                rows.push(CalibrationRow {
                    location: j + 1,
                    meter_epsilon: e,
                    laplace_scale: b,
                    noise_variance: 2.0 * b * b,
                    total_epsilon: c.budget.epsilon(),
                    total_delta: c.budget.delta(),
                    vacuous: c.vacuous,
                });
            }
        }
        None => {
            writeln!(text, "baseline: noiseless substation meter, eps0 is infinite").unwrap();
            for (j, (&e, &b)) in eps.iter().zip(&scales).enumerate() {
                let delta = delta0 * e.exp();
                rows.push(CalibrationRow {
                    location: j + 1,
                    meter_epsilon: e,
                    laplace_scale: b,
                    noise_variance: 2.0 * b * b,
                    total_epsilon: f64::INFINITY,
                    total_delta: delta.min(1.0),
                    vacuous: true,
                });
            }
        }
    }
    writeln!(text, "composed budgets use the exact baseline eps0").unwrap();
    let mut table = Vec::new();
    io::write_rows(&mut table, &rows).map_err(|e| CliError::Io(e.to_string()))?;
    text.push_str(&String::from_utf8(table).expect("csv output is UTF-8"));

    let path = out_dir(cfg)?.join("calibration.csv");
    io::write_rows_to_file(&path, &rows)?;
    Ok(text)
}

/// Runs the configured estimators on a measurement file, or on measurements simulated
/// from the configured seed when no file is given.
pub fn estimate(cfg: &ScenarioConfig, measurements: Option<&Path>) -> Result<String, CliError> {
    let model = cfg.feeder_model()?;
    let n = model.n_locations();
    let scales = cfg.laplace_scales(&model)?;
    let methods = cfg.estimation.method.estimators();
    let dir = out_dir(cfg)?;
    let mut text = String::new();

    let readings = match measurements {
        Some(path) => io::read_measurements_file(path, n)?,
        None => {
            let seed = cfg.mc.seed;
            let loads = sample_loads(&model, seed);
            let meas =
                sample_measurements(&model, &loads, &scales, worker_seed(seed, 1)).map_err(core_err("simulation"))?;
            let r = Readings { z0: meas.z0, z: meas.z };
            let path = dir.join("simulated_measurements.csv");
            let file = std::fs::File::create(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            io::write_measurements(file, &r).map_err(|e| CliError::Io(e.to_string()))?;
            writeln!(
                text,
                "# simulated measurements (seed {seed}) written to {}",
                path.display()
            )
            .unwrap();
            r
        }
    };
    let meas = MeasurementSet::new(readings.z0, readings.z.clone(), scales.clone())
        .map_err(|e| CliError::Usage(format!("measurements: {e}")))?;
    let noise = NoiseVariances::from_laplace_scales(&scales).map_err(core_err("privacy"))?;

    let mut rows = Vec::new();
    let mut push = |tag: EstimatorTag, point: &[f64], acc: Option<&[f64]>| {
        for j in 0..n {
            rows.push(EstimateRow {
                estimator: tag.name().to_string(),
                location: j + 1,
                estimate: point[j],
                accuracy: acc.map(|a| a[j]),
            });
        }
    };
    let mut failure = None;
    for tag in methods {
        match tag {
            EstimatorTag::BaseMmse => {
                let e = BaseMmse::new(&model).map_err(core_err("base"))?;
                push(tag, &e.estimate(meas.z0), Some(e.accuracy()));
            }
            EstimatorTag::LmmseFull => {
                let e = LmmseFull::new(&model, &noise).map_err(core_err("lmmse-full"))?;
                push(tag, &e.estimate(meas.z0, &meas.z), Some(e.accuracy()));
            }
            EstimatorTag::LmmseReduced => {
                let e = ReducedLmmse::new(&model, &noise).map_err(core_err("lmmse-reduced"))?;
                push(tag, &e.estimate(meas.z0, &meas.z), Some(&e.accuracy()));
            }
            EstimatorTag::Map => {
                cfg.check_map_weights(&scales)?;
                let opts = cfg.map_options()?;
                let problem = MapProblem::from_measurements(&model, &meas).map_err(core_err("map"))?;
                let sol = solve_map(&problem, opts).map_err(core_err("map"))?;
                push(tag, &sol.point, None);
                if !sol.converged {
                    failure = Some(format!(
                        "stopped after {} iterations with KKT residual {:e} > tol {:e} (objective {})",
                        sol.iterations, sol.kkt_residual, opts.tol, sol.objective
                    ));
                }
            }
        }
    }

    let path = dir.join("estimates.csv");
    io::write_rows_to_file(&path, &rows)?;
    let mut table = Vec::new();
    io::write_rows(&mut table, &rows).map_err(|e| CliError::Io(e.to_string()))?;
    text.push_str(&String::from_utf8(table).expect("csv output is UTF-8"));
    match failure {
        Some(msg) => Err(CliError::NonConvergence(format!(
            "{msg}; last iterate written to {}",
            path.display()
        ))),
        None => Ok(text),
    }
}

pub fn tradeoff_file_name(eta: f64, zeta: f64) -> String {
    format!("tradeoff_eta{eta}_zeta{zeta}.csv")
}

/// One trade-off curve file per `(eta, zeta)` pair.
pub fn tradeoff(cfg: &ScenarioConfig, exact_eps0: bool) -> Result<String, CliError> {
    let configs = cfg.tradeoff_configs()?;
    let mode = if exact_eps0 {
        Epsilon0Mode::Exact
    } else {
        Epsilon0Mode::Approximate
    };
    let dir = out_dir(cfg)?;
    let mut text = String::new();
    for c in &configs {
        let points = sweep_figure_curves(c, mode).map_err(core_err("tradeoff"))?;
        let rows: Vec<TradeoffRow> = points.iter().map(|p| TradeoffRow::new(p, c.eta, c.zeta)).collect();
        let path = dir.join(tradeoff_file_name(c.eta, c.zeta));
        io::write_rows_to_file(&path, &rows)?;
        writeln!(
            text,
            "eta={} zeta={} eps0={} ({} points) -> {}",
            c.eta,
            c.zeta,
            points[0].epsilon0,
            rows.len(),
            path.display()
        )
        .unwrap();
    }
    Ok(text)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct MseRow {
    estimator: String,
    location: usize,
    trials_used: usize,
    mse: f64,
    mse_se: f64,
    accuracy: Option<f64>,
    rel_error: Option<f64>,
    mean_error: f64,
    mean_error_se: f64,
}

fn mse_rows(report: &McReport) -> Vec<MseRow> {
    let mut rows = Vec::new();
    for st in &report.stats {
        for j in 0..st.mse.len() {
            rows.push(MseRow {
                estimator: st.label.to_string(),
                location: j + 1,
                trials_used: st.trials_used,
                mse: st.mse[j],
                mse_se: st.mse_se[j],
                accuracy: st.analytic.as_ref().map(|a| a[j]),
                rel_error: st.rel_error.as_ref().map(|r| r[j]),
                mean_error: st.mean_error[j],
                mean_error_se: st.mean_error_se[j],
            });
        }
    }
    rows
}

/// Runs every worker, on its own thread when there is more than one, and returns the
/// partial results in worker order.
pub fn run_workers(exp: &Experiment<'_>, mc: &McConfig) -> Vec<WorkerResult> {
    if mc.workers == 1 {
        return vec![exp.run_worker(mc, 0)];
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..mc.workers)
            .map(|w| s.spawn(move || exp.run_worker(mc, w)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker thread panicked"))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOutcome {
    pub report: String,
    pub failed: Vec<String>,
}

/// End-to-end verification: mechanism checks, closed-form estimator checks, Monte Carlo
/// comparison and, when configured, trade-off consistency.
///
/// With `negative_control` the Laplace scales in the mechanism checks are shrunk to 90%
/// of their calibrated values, which must make those checks fail.
pub fn verify(cfg: &ScenarioConfig, negative_control: bool) -> Result<VerifyOutcome, CliError> {
    let model = cfg.feeder_model()?;
    let privacy = cfg.privacy_section()?;
    let scales = cfg.laplace_scales(&model)?;
    let noise = NoiseVariances::from_laplace_scales(&scales).map_err(core_err("privacy"))?;
    let method = cfg.estimation.method;
    let tags = method.estimators();
    let map = if tags.contains(&EstimatorTag::Map) {
        cfg.check_map_weights(&scales)?;
        Some(cfg.map_options()?)
    } else {
        None
    };
    let offset = cfg.estimation.perturbed_gain_offset;
    if !(offset.is_finite() && offset != 0.0) {
        return Err(CliError::Config(
            "estimation.perturbed_gain_offset must be finite and nonzero".into(),
        ));
    }
    let selection = EstimatorSelection {
        base: tags.contains(&EstimatorTag::BaseMmse),
        lmmse_full: tags.contains(&EstimatorTag::LmmseFull),
        lmmse_reduced: tags.contains(&EstimatorTag::LmmseReduced),
        map,
        perturbed_gain: Some(offset),
    };
    let mc = McConfig {
        trials: cfg.mc.trials,
        root_seed: cfg.mc.seed,
        workers: cfg.mc.workers,
    };
    mc.validate().map_err(core_err("mc"))?;

    let scale_factor = if negative_control { 0.9 } else { 1.0 };
    let mut checks: Vec<Check> = run_dp_checks(
        &privacy.delta_grid,
        &privacy.epsilon_grid,
        model.customer_bound(),
        scale_factor,
    )
    .map_err(core_err("privacy"))?;
    checks.extend(analytic_estimator_checks(&model, &noise).map_err(core_err("feeder"))?);

    let exp = Experiment::new(&model, &scales, selection).map_err(core_err("mc"))?;
    let results = run_workers(&exp, &mc);
    let report = exp.report(&mc, &results);
    checks.extend(mc_checks(&report));

    if cfg.tradeoff.is_some() {
        for c in cfg.tradeoff_configs()? {
            checks.extend(tradeoff_checks(&c).map_err(core_err("tradeoff"))?);
        }
    }

    let mut text = String::new();
    writeln!(text, "verification report").unwrap();
    writeln!(
        text,
        "config: locations={} trials={} seed={} workers={} method={} negative_control={negative_control}",
        model.n_locations(),
        mc.trials,
        mc.root_seed,
        mc.workers,
        method_name(method)
    )
    .unwrap();
    writeln!(text).unwrap();
    writeln!(text, "checks:").unwrap();
    for c in &checks {
        writeln!(text, "  [{}] {}: {}", c.status.name(), c.name, c.detail).unwrap();
    }
    writeln!(text).unwrap();
    writeln!(
        text,
        "monte carlo (empirical MSE, standard error, closed-form accuracy, relative error):"
    )
    .unwrap();
    for st in &report.stats {
        for j in 0..st.mse.len() {
            let acc = st.analytic.as_ref().map_or("-".to_string(), |a| a[j].to_string());
            let rel = st
                .rel_error
                .as_ref()
                .map_or("-".to_string(), |r| format!("{:+.3e}", r[j]));
            writeln!(
                text,
                "  {:<22} location {:>2}: mse={:.6e} se={:.2e} accuracy={} rel={} (trials {})",
                st.label.to_string(),
                j + 1,
                st.mse[j],
                st.mse_se[j],
                acc,
                rel,
                st.trials_used
            )
            .unwrap();
        }
    }
    let count = |s: CheckStatus| checks.iter().filter(|c| c.status == s).count();
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| c.status == CheckStatus::Fail)
        .map(|c| c.name.clone())
        .collect();
    writeln!(text).unwrap();
    writeln!(
        text,
        "summary: {} pass, {} fail, {} inconclusive, {} info",
        count(CheckStatus::Pass),
        count(CheckStatus::Fail),
        count(CheckStatus::Inconclusive),
        count(CheckStatus::Info)
    )
    .unwrap();
    writeln!(text, "result: {}", if failed.is_empty() { "PASS" } else { "FAIL" }).unwrap();

    let dir = out_dir(cfg)?;
    io::write_text(&dir.join("verify_report.txt"), &text)?;
    io::write_rows_to_file(&dir.join("verify_mse.csv"), &mse_rows(&report))?;
    Ok(VerifyOutcome { report: text, failed })
}
