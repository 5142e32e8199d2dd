//! Estimation and validation of ratio-based conditional average treatment
//! effects (CATE) from observational data.
//!
//! The CATE is measured by the ratio `D(z) = E[Y(1) | z] / E[Y(0) | z]` of the
//! conditional means of two nonnegative potential outcomes. Two training
//! estimators produce log-linear CATE scores `exp(δᵀz̃)`:
//!
//! - [`contrast`]: a doubly robust, Neyman-orthogonal estimating equation for
//!   `δ`, solved with cross-fitted nuisances and equipped with a sandwich
//!   covariance.
//! - [`tworeg`]: per-arm calibrated outcome predictions projected onto a
//!   Poisson working model, so that a misspecified working model does not
//!   introduce spurious heterogeneity under confounding.
//!
//! Scores are validated with [`validate`], which estimates the subgroup
//! treatment-effect ratio among the top-`q` fraction of a validation sample
//! with an augmented inverse-propensity estimator. [`survival`] carries the
//! same machinery over to right-censored event times using the ratio of
//! restricted mean time lost, and [`sim`] holds the data-generating processes,
//! exact oracles and the replicate runner used by the acceptance suite.

pub mod contrast;
pub mod data;
pub mod error;
pub mod linalg;
pub mod nuisance;
pub mod pipeline;
pub mod seed;
pub mod sim;
pub mod survival;
pub mod tworeg;
pub mod validate;

pub use error::{Error, Result};
