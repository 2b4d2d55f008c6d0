//! Extrapolation bounds for conditional functions outside the observed
//! covariate support.
//!
//! The library estimates directional derivatives of an arbitrary pilot
//! regression fit from its predictions at the sample points (random
//! forests with a polynomial splitting rule feeding weighted local
//! polynomials), assembles Taylor-based lower/upper envelopes at target
//! points, and derives the downstream inference products: worst-case
//! optimal predictions, extrapolation-aware prediction and confidence
//! intervals, and extrapolation scores. A simulation module generates
//! piecewise-linear ground-truth models for validating consistency and
//! coverage.
//!
//! The typical pipeline is:
//!
//! 1. fit any pilot regression and evaluate it at the training points;
//! 2. estimate per-coordinate derivatives with [`locpol::rf_loc_pol`]
//!    (optionally selecting hyperparameters with [`tuning::tune`]);
//! 3. assemble bounds with [`bounds::bounds_order_one`] (or
//!    [`bounds::bounds_one_dim`] for univariate higher orders);
//! 4. read off predictions, intervals and scores from the [`inference`]
//!    module.

pub mod bounds;
pub mod data;
pub mod error;
pub mod forest;
pub mod inference;
pub mod locpol;
pub mod simlab;
pub mod stats;
pub mod tuning;

pub use data::{BoundTable, DerivativeField, SampleSet};
pub use error::{Error, Result};
