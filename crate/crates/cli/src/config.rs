//! Scenario configuration (TOML). Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use dpse_core::linalg::Matrix;
use dpse_core::tradeoff::TradeoffConfig;
use dpse_core::{EstimatorTag, FeederModel};
use serde::Deserialize;

use crate::CliError;

/// Configuration used when `--config` is not given.
pub const DEFAULT_CONFIG: &str = include_str!("../../../configs/default.toml");

/// Every accepted key, with its meaning. Printed by `--help` on every subcommand.
pub const CONFIG_KEYS_HELP: &str = "\
CONFIG FILE (TOML; unknown keys are rejected):
  [feeder]
    mean                  prior mean load per location, amperes (length N)
    covariance            full symmetric positive definite N x N load covariance
    variances             diagonal of the covariance (alternative to `covariance`)
    correlation           common correlation coefficient used with `variances` [default: 0]
    substation_noise_var  substation meter noise variance R0, amperes^2
    customer_bound        largest single-customer load, amperes (sets the sensitivity)
  [privacy]
    delta0                baseline delta of the substation measurement
    meter_epsilon         meter privacy loss: one value, or one per location
    delta_grid            deltas for the mechanism checks in `verify` [default: 0.5, 0.05, 0.01, 1e-6]
    epsilon_grid          epsilons for the mechanism checks in `verify` [default: 0.05, 0.1, 0.5, 1, 2]
  [estimation]
    method                base | map | lmmse-full | lmmse-reduced | all [default: all]
    map_tol               MAP stopping tolerance on the KKT residual [default: 1e-8]
    map_max_iter          MAP iteration limit [default: 50000]
    heterogeneous_map_weights
                          allow different meter scales in the MAP objective [default: false]
    perturbed_gain_offset gain shift of the reduced-LMMSE negative control in `verify` [default: 0.1]
  [mc]
    trials                Monte Carlo trials for `verify` [default: 100000]
    seed                  root seed [default: 1]
    workers               worker streams (threads) [default: 1]
  [tradeoff]
    p0                    total load variance P0
    r0                    substation noise variance R0
    delta0                baseline delta
    eta                   customer-size ratio(s); one curve per (eta, zeta) pair
    zeta                  location variance share(s) in (0, 1)
    epsilon_grid          meter privacy losses, strictly increasing
    epsilon_max           alternative to `epsilon_grid`: uniform grid on (0, epsilon_max]
    points                number of points of the uniform grid [default: 200]
  [output]
    dir                   output directory [default: out]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Base,
    Map,
    LmmseFull,
    LmmseReduced,
    All,
}

impl Method {
    pub fn estimators(self) -> Vec<EstimatorTag> {
        match self {
            Method::Base => vec![EstimatorTag::BaseMmse],
            Method::Map => vec![EstimatorTag::Map],
            Method::LmmseFull => vec![EstimatorTag::LmmseFull],
            Method::LmmseReduced => vec![EstimatorTag::LmmseReduced],
            Method::All => EstimatorTag::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            OneOrMany::One(v) => vec![*v],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub feeder: Option<FeederSection>,
    pub privacy: Option<PrivacySection>,
    #[serde(default)]
    pub estimation: EstimationSection,
    #[serde(default)]
    pub mc: McSection,
    pub tradeoff: Option<TradeoffSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeederSection {
    pub mean: Vec<f64>,
    pub covariance: Option<Vec<Vec<f64>>>,
    pub variances: Option<Vec<f64>>,
    pub correlation: Option<f64>,
    pub substation_noise_var: f64,
    pub customer_bound: f64,
}

fn default_delta_grid() -> Vec<f64> {
    vec![0.5, 0.05, 0.01, 1e-6]
}

fn default_epsilon_grid() -> Vec<f64> {
    vec![0.05, 0.1, 0.5, 1.0, 2.0]
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacySection {
    pub delta0: f64,
    pub meter_epsilon: OneOrMany,
    #[serde(default = "default_delta_grid")]
    pub delta_grid: Vec<f64>,
    #[serde(default = "default_epsilon_grid")]
    pub epsilon_grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimationSection {
    pub method: Method,
    pub map_tol: f64,
    pub map_max_iter: usize,
    pub heterogeneous_map_weights: bool,
    pub perturbed_gain_offset: f64,
}

impl Default for EstimationSection {
    fn default() -> Self {
        Self {
            method: Method::All,
            map_tol: dpse_core::map::DEFAULT_TOL,
            map_max_iter: dpse_core::map::DEFAULT_MAX_ITER,
            heterogeneous_map_weights: false,
            perturbed_gain_offset: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSection {
    pub trials: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for McSection {
    fn default() -> Self {
        Self {
            trials: 100_000,
            seed: 1,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TradeoffSection {
    pub p0: f64,
    pub r0: f64,
    pub delta0: f64,
    pub eta: OneOrMany,
    pub zeta: OneOrMany,
    pub epsilon_grid: Option<Vec<f64>>,
    pub epsilon_max: Option<f64>,
    pub points: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ScenarioConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| config_err(format!("{origin}: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn builtin() -> Self {
        Self::parse(DEFAULT_CONFIG, "built-in default config").expect("built-in config is valid")
    }

    pub fn feeder_section(&self) -> Result<&FeederSection, CliError> {
        self.feeder
            .as_ref()
            .ok_or_else(|| config_err("missing [feeder] section"))
    }

    pub fn privacy_section(&self) -> Result<&PrivacySection, CliError> {
        self.privacy
            .as_ref()
            .ok_or_else(|| config_err("missing [privacy] section"))
    }

    pub fn tradeoff_section(&self) -> Result<&TradeoffSection, CliError> {
        self.tradeoff
            .as_ref()
            .ok_or_else(|| config_err("missing [tradeoff] section"))
    }

    pub fn feeder_model(&self) -> Result<FeederModel, CliError> {
        let f = self.feeder_section()?;
        let n = f.mean.len();
        let covariance = match (&f.covariance, &f.variances) {
            (Some(_), Some(_)) => {
                return Err(config_err(
                    "feeder.covariance and feeder.variances are both set; give exactly one",
                ))
            }
            (None, None) => return Err(config_err("feeder: one of `covariance` or `variances` is required")),
            (Some(rows), None) => {
                if f.correlation.is_some() {
                    return Err(config_err(
                        "feeder.correlation applies only together with feeder.variances",
                    ));
                }
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(config_err(format!(
                        "feeder.covariance must be {n} x {n} to match feeder.mean"
                    )));
                }
                Matrix::from_fn(n, n, |i, j| rows[i][j])
            }
            (None, Some(v)) => {
                if v.len() != n {
                    return Err(config_err(format!(
                        "feeder.variances has {} entries, feeder.mean has {n}",
                        v.len()
                    )));
                }
                if let Some(j) = v.iter().position(|x| !(*x > 0.0)) {
                    return Err(config_err(format!("feeder.variances[{j}] must be > 0")));
                }
                let rho = f.correlation.unwrap_or(0.0);
                if !(rho.abs() < 1.0) {
                    return Err(config_err("feeder.correlation must lie in (-1, 1)"));
                }
                Matrix::from_fn(n, n, |i, j| if i == j { v[i] } else { rho * (v[i] * v[j]).sqrt() })
            }
        };
        FeederModel::new(f.mean.clone(), covariance, f.substation_noise_var, f.customer_bound)
            .map_err(|e| config_err(format!("feeder: {e}")))
    }

    /// Meter privacy loss per location.
    pub fn meter_epsilons(&self, n: usize) -> Result<Vec<f64>, CliError> {
        let eps = match &self.privacy_section()?.meter_epsilon {
            OneOrMany::One(e) => vec![*e; n],
            OneOrMany::Many(v) if v.len() == n => v.clone(),
            OneOrMany::Many(v) => {
                return Err(config_err(format!(
                    "privacy.meter_epsilon has {} entries; expected 1 or {n}",
                    v.len()
                )))
            }
        };
        if let Some(j) = eps.iter().position(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(config_err(format!("privacy.meter_epsilon[{j}] must be finite and > 0")));
        }
        Ok(eps)
    }

    /// Laplace scales `Δ/εj` of the meters.
    pub fn laplace_scales(&self, model: &FeederModel) -> Result<Vec<f64>, CliError> {
        self.meter_epsilons(model.n_locations())?
            .into_iter()
            .map(|e| dpse_core::privacy::laplace_scale_for(e, model.customer_bound()))
            .collect::<dpse_core::Result<_>>()
            .map_err(|e| config_err(format!("privacy: {e}")))
    }

    /// MAP needs a common meter scale unless the heterogeneous extension is switched on.
    pub fn check_map_weights(&self, scales: &[f64]) -> Result<(), CliError> {
        if self.estimation.heterogeneous_map_weights {
            return Ok(());
        }
        if scales.windows(2).any(|w| w[0] != w[1]) {
            return Err(config_err(
                "the MAP estimator uses one meter scale for all locations; the meter epsilons differ, \
                 so set estimation.heterogeneous_map_weights = true to use per-location weights",
            ));
        }
        Ok(())
    }

    pub fn map_options(&self) -> Result<dpse_core::MapOptions, CliError> {
        let e = &self.estimation;
        if !(e.map_tol > 0.0) {
            return Err(config_err("estimation.map_tol must be > 0"));
        }
        if e.map_max_iter == 0 {
            return Err(config_err("estimation.map_max_iter must be >= 1"));
        }
        Ok(dpse_core::MapOptions {
            tol: e.map_tol,
            max_iter: e.map_max_iter,
        })
    }

    /// One configuration per `(eta, zeta)` pair, eta varying slowest.
    pub fn tradeoff_configs(&self) -> Result<Vec<TradeoffConfig>, CliError> {
        let t = self.tradeoff_section()?;
        let grid = match (&t.epsilon_grid, t.epsilon_max) {
            (Some(_), Some(_)) => {
                return Err(config_err(
                    "tradeoff.epsilon_grid and tradeoff.epsilon_max are both set; give exactly one",
                ))
            }
            (Some(g), None) => {
                if t.points.is_some() {
                    return Err(config_err(
                        "tradeoff.points applies only together with tradeoff.epsilon_max",
                    ));
                }
                g.clone()
            }
            (None, Some(max)) => {
                let points = t.points.unwrap_or(200);
                if !(max > 0.0) || points == 0 {
                    return Err(config_err("tradeoff.epsilon_max must be > 0 and tradeoff.points >= 1"));
                }
                (1..=points).map(|i| max * i as f64 / points as f64).collect()
            }
            (None, None) => {
                return Err(config_err(
                    "tradeoff: one of `epsilon_grid` or `epsilon_max` is required",
                ))
            }
        };
        if grid.is_empty() {
            return Err(config_err("tradeoff.epsilon_grid is empty"));
        }
        let (etas, zetas) = (t.eta.to_vec(), t.zeta.to_vec());
        if etas.is_empty() || zetas.is_empty() {
            return Err(config_err("tradeoff.eta and tradeoff.zeta need at least one value"));
        }
        let mut out = Vec::new();
        for &eta in &etas {
            for &zeta in &zetas {
                let cfg = TradeoffConfig {
                    p0: t.p0,
                    r0: t.r0,
                    delta0: t.delta0,
                    eta,
                    zeta,
                    epsilon_grid: grid.clone(),
                };
                cfg.validate()
                    .map_err(|e| config_err(format!("tradeoff (eta={eta}, zeta={zeta}): {e}")))?;
                out.push(cfg);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<ScenarioConfig, CliError> {
        ScenarioConfig::parse(s, "test")
    }

    const FEEDER: &str =
        "[feeder]\nmean = [1.0, 2.0]\nvariances = [0.5, 0.25]\nsubstation_noise_var = 0.1\ncustomer_bound = 0.5\n";

    #[test]
    fn builtin_parses() {
        let c = ScenarioConfig::builtin();
        let m = c.feeder_model().unwrap();
        assert!(c.laplace_scales(&m).is_ok());
        assert!(c.tradeoff_configs().is_ok());
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = parse(&format!("{FEEDER}colour = 1\n")).unwrap_err();
        assert!(e.to_string().contains("colour"), "{e}");
        assert!(parse("[mc]\ntrails = 3\n").is_err());
        assert!(parse("[bogus]\n").is_err());
    }

    #[test]
    fn missing_field_is_named() {
        let e = parse("[feeder]\nmean = [1.0]\nvariances = [1.0]\nsubstation_noise_var = 0.1\n").unwrap_err();
        assert!(e.to_string().contains("customer_bound"), "{e}");
    }

    #[test]
    fn covariance_forms() {
        let c = parse(&format!("{FEEDER}correlation = 0.5\n")).unwrap();
        let m = c.feeder_model().unwrap();
        let expect = 0.5 * (0.5f64 * 0.25).sqrt();
        assert!((m.covariance()[(0, 1)] - expect).abs() < 1e-15);

        let both = FEEDER.replace("variances", "covariance = [[1.0, 0.0], [0.0, 1.0]]\nvariances");
        assert!(parse(&both)
            .unwrap()
            .feeder_model()
            .unwrap_err()
            .to_string()
            .contains("both"));

        let full = FEEDER.replace("variances = [0.5, 0.25]", "covariance = [[1.0, 0.2], [0.2, 1.0]]");
        assert_eq!(parse(&full).unwrap().feeder_model().unwrap().covariance()[(1, 0)], 0.2);

        let bad = FEEDER.replace("variances = [0.5, 0.25]", "covariance = [[1.0, 2.0], [2.0, 1.0]]");
        assert!(parse(&bad).unwrap().feeder_model().is_err());
    }

    #[test]
    fn meter_epsilon_forms() {
        let c = parse(&format!("{FEEDER}[privacy]\ndelta0 = 0.05\nmeter_epsilon = 0.1\n")).unwrap();
        let m = c.feeder_model().unwrap();
        assert_eq!(c.laplace_scales(&m).unwrap(), vec![5.0, 5.0]);
        let c = parse(&format!(
            "{FEEDER}[privacy]\ndelta0 = 0.05\nmeter_epsilon = [0.1, 0.5, 1.0]\n"
        ))
        .unwrap();
        assert!(c.laplace_scales(&m).is_err());
        let c = parse(&format!(
            "{FEEDER}[privacy]\ndelta0 = 0.05\nmeter_epsilon = [0.1, 0.5]\n"
        ))
        .unwrap();
        let scales = c.laplace_scales(&m).unwrap();
        assert!(c.check_map_weights(&scales).is_err());
        let c = parse(&format!(
            "{FEEDER}[privacy]\ndelta0 = 0.05\nmeter_epsilon = [0.1, 0.5]\n[estimation]\nheterogeneous_map_weights = true\n"
        ))
        .unwrap();
        assert!(c.check_map_weights(&scales).is_ok());
    }

    #[test]
    fn tradeoff_grids() {
        let base = "[tradeoff]\np0 = 1.0\nr0 = 0.05\ndelta0 = 0.05\neta = [0.01, 0.02]\nzeta = 0.1\n";
        let c = parse(&format!("{base}epsilon_max = 1.0\npoints = 4\n")).unwrap();
        let t = c.tradeoff_configs().unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[1].eta, 0.02);
        assert_eq!(t[0].epsilon_grid, vec![0.25, 0.5, 0.75, 1.0]);
        assert!(parse(&format!("{base}epsilon_grid = []\n"))
            .unwrap()
            .tradeoff_configs()
            .is_err());
        assert!(parse(&format!("{base}epsilon_grid = [0.2, 0.1]\n"))
            .unwrap()
            .tradeoff_configs()
            .is_err());
        let z1 = base.replace("zeta = 0.1", "zeta = 1.0");
        assert!(parse(&format!("{z1}epsilon_max = 1.0\n"))
            .unwrap()
            .tradeoff_configs()
            .is_err());
    }
}
