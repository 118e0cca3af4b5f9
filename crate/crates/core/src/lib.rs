//! Differentially private state estimation for a single radial distribution feeder.
//!
//! The operator observes a noisy substation current `Z0 = sum(L) + W0` and, optionally,
//! privacy-preserving smart-meter readings `Zj = Lj + Wj` where `Wj` is Laplacian noise
//! calibrated to the customer's privacy budget. This crate contains:
//!
//! - [`feeder`]: the load prior, current conservation and synthetic sampling,
//! - [`privacy`]: Laplace/Gaussian mechanism calibration and budget composition,
//! - [`estimators`]: closed-form MMSE and LMMSE estimators with analytic accuracies,
//! - [`map`]: the MAP estimate under Laplacian meter noise via accelerated proximal gradient,
//! - [`tradeoff`]: relative accuracy improvement versus total privacy loss,
//! - [`verification`]: Monte Carlo and analytic oracles tying the above together.
//!
//! The crate is `no_std` and only needs `alloc`. Locations are indexed from zero in the
//! API; location `j` here is service drop `j + 1` along the line.

#![no_std]
// `!(x > 0.0)` is used on purpose: it rejects NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod estimators;
pub mod feeder;
pub mod linalg;
pub mod map;
pub mod privacy;
pub mod special;
pub mod tradeoff;
pub mod verification;

pub use error::{Error, Result};
pub use estimators::{EstimateReport, EstimatorTag, NoiseVariances};
pub use feeder::{DerivedMoments, FeederModel, LoadRealization, MeasurementSet};
pub use map::{MapOptions, MapProblem, MapSolution};
pub use privacy::{PrivacyBudget, QueryKind};
pub use tradeoff::{TradeoffConfig, TradeoffPoint};
