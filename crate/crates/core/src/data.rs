//! Core data containers: samples with pilot predictions, estimated
//! derivative fields and bound tables.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Observed covariates paired with pilot predictions at those points.
///
/// Row `i` of `covariates` pairs with `pilot[i]`; the ordering is stable
/// across all operations in this crate.
#[derive(Debug, Clone)]
pub struct SampleSet {
    covariates: Array2<f64>,
    pilot: Array1<f64>,
}

impl SampleSet {
    /// Builds a sample set, validating shapes and finiteness.
    pub fn new(covariates: Array2<f64>, pilot: Array1<f64>) -> Result<Self> {
        let n = covariates.nrows();
        let d = covariates.ncols();
        if n == 0 || d == 0 {
            return Err(Error::EmptyInput(format!(
                "sample set must have n >= 1 and d >= 1, got n={n}, d={d}"
            )));
        }
        if pilot.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "pilot length {} does not match sample count {}",
                pilot.len(),
                n
            )));
        }
        if covariates.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("covariate matrix".into()));
        }
        if pilot.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pilot predictions".into()));
        }
        Ok(Self { covariates, pilot })
    }

    pub fn n(&self) -> usize {
        self.covariates.nrows()
    }

    pub fn dim(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn covariates(&self) -> &Array2<f64> {
        &self.covariates
    }

    pub fn pilot(&self) -> &Array1<f64> {
        &self.pilot
    }
}

/// Estimated derivatives of the pilot surface at every sample point.
///
/// Two layouts exist: `OrderOne` stores the gradient (one first-order
/// partial per coordinate, an n×d matrix), `OneDimensional` stores the
/// derivatives of orders `1..=q` of a univariate surface (an n×q matrix).
#[derive(Debug, Clone, PartialEq)]
pub enum DerivativeField {
    /// Entry `(i, j)` is the estimated partial derivative in coordinate `j`
    /// at sample `i`.
    OrderOne(Array2<f64>),
    /// Entry `(i, k)` is the estimated derivative of order `k + 1` at
    /// sample `i`; requires d = 1.
    OneDimensional(Array2<f64>),
}

impl DerivativeField {
    pub fn order_one(gradients: Array2<f64>) -> Result<Self> {
        if gradients.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gradient matrix".into()));
        }
        Ok(Self::OrderOne(gradients))
    }

    pub fn one_dimensional(derivatives: Array2<f64>) -> Result<Self> {
        if derivatives.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("derivative matrix".into()));
        }
        if derivatives.ncols() == 0 {
            return Err(Error::InvalidParameter(
                "one-dimensional derivative field needs order q >= 1".into(),
            ));
        }
        Ok(Self::OneDimensional(derivatives))
    }

    /// Number of sample rows the field was estimated at.
    pub fn n(&self) -> usize {
        match self {
            Self::OrderOne(m) | Self::OneDimensional(m) => m.nrows(),
        }
    }

    /// Highest derivative order the field carries.
    pub fn order(&self) -> usize {
        match self {
            Self::OrderOne(_) => 1,
            Self::OneDimensional(m) => m.ncols(),
        }
    }
}

/// Lower/upper extrapolation bounds evaluated at a set of target points.
#[derive(Debug, Clone)]
pub struct BoundTable {
    /// Target points, one per row.
    pub targets: Array2<f64>,
    /// Lower bound per target.
    pub lower: Array1<f64>,
    /// Upper bound per target.
    pub upper: Array1<f64>,
    /// True where the raw lower exceeded the raw upper and both were
    /// replaced by their midpoint.
    pub clamped: Vec<bool>,
}

impl BoundTable {
    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    /// Interval width per target (non-negative after clamping).
    pub fn widths(&self) -> Array1<f64> {
        &self.upper - &self.lower
    }

    /// Interval midpoint per target.
    pub fn midpoints(&self) -> Array1<f64> {
        (&self.upper + &self.lower) / 2.0
    }
}
