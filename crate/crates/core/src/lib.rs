//! Modified Mike-Farmer order-driven market model and recurrence-interval
//! analysis of its returns.
//!
//! The crate is organised as a pipeline:
//!
//! - [`stochastic`]: seeded fGn, order signs, Student relative prices, and
//!   rank-remapping surrogates that impose long memory on relative prices.
//! - [`lob`]: a price-time priority book of unit-size orders.
//! - [`simulator`]: drives the book and records standardized mid-price returns.
//! - [`recurrence`]: threshold exceedance intervals, scaled PDFs and the
//!   generalized Gamma fit.
//! - [`scaling`]: DFA and MFDFA.
//! - [`regression`]: the planar fit of the PDF exponent over the parameter grid.
//! - [`experiment`]: parameter sweeps, persistence and reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod lob;
pub mod recurrence;
pub mod regression;
pub mod scaling;
pub mod simulator;
pub mod stochastic;
pub mod textio;

pub use error::{Error, Result};
pub use experiment::{CellResult, SweepConfig, ThresholdResult};
pub use lob::{OrderBook, Side};
pub use recurrence::{GammaFit, IntervalSeries, ScaledPdf};
pub use regression::{BetaPoint, SurfaceFit};
pub use scaling::{DfaResult, MfdfaResult};
pub use simulator::{ModelParams, ReturnSampling, ReturnSeries, RunDiagnostics};
pub use stochastic::{FgnSeries, RelativePriceSeries, StudentParams};
