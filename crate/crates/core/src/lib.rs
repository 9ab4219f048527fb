//! Solvers for two-stage stochastic box-constrained variational inequalities.
//!
//! * [`model`]: instance data, the componentwise median, the first-stage
//!   residual and strong-monotonicity certificates.
//! * [`boxvi`]: semismooth Newton for box LVIs plus an enumeration oracle.
//! * [`second_stage`]: the recourse solution map and its generalized Jacobian.
//! * [`phm`]: progressive hedging on the sample average approximation.
//! * [`generator`]: seeded, certified random game instances.
//! * [`saa`]: the sample-size sweep with out-of-sample residual statistics.
//! * [`cli`]: the `svi2` command line tool.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boxvi;
pub mod cli;
pub mod error;
pub mod generator;
pub mod linalg;
pub mod model;
pub mod phm;
pub mod saa;
pub mod second_stage;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
