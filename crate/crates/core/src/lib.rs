//! Task-based day-ahead load forecasting.
//!
//! A feed-forward forecaster produces a Gaussian next-day load distribution,
//! a stochastic economic dispatch (SED) is solved against it by sequential
//! quadratic programming, and the realized dispatch cost is differentiated
//! back into the forecaster through the KKT conditions of the dispatch.
//!
//! The crate is `no_std` (with `alloc`). File formats, CSV ingestion and the
//! command line live in the `lfednet` companion crate.
//!
//! Module map:
//!
//! - [`grid`]: power-system data model and the linear constraint set.
//! - [`gaussmath`]: Gaussian closed forms of the expected penalty terms.
//! - [`sed`]: the smoothed dispatch objective, gradient and Hessian.
//! - [`solver`]: interior-point QP and the SQP driver.
//! - [`taskgrad`]: realized task loss and argmin sensitivities.
//! - [`net`]: the residual forecasting network.
//! - [`data`]: features, normalization, splits and the synthetic generator.
//! - [`train`]: pretraining and task training loops.
//! - [`metrics`]: evaluation protocol.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod data;
pub mod gaussmath;
pub mod grid;
pub mod linalg;
pub mod metrics;
pub mod net;
pub mod sed;
pub mod solver;
pub mod taskgrad;
pub mod train;

pub use grid::{ConstraintSet, DispatchSchedule, Generator, Line, SystemConfig, SystemDocument};
pub use sed::{ForecastDistribution, SedProblem};
pub use solver::{solve_qp, solve_sed, QpSolution, SqpResult, SqpSettings};

/// Number of hourly values forecast per day.
pub const HOURS_PER_DAY: usize = 24;
