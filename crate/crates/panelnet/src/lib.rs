//! Fixed-effects panel regression on distribution moments.
//!
//! The library estimates panel regressions whose regressors are empirical
//! moments of a high-frequency variable (e.g. annual mean and variance of
//! daily temperatures) and whose regression function is either linear or a
//! single-hidden-layer feedforward network (SLFN) fitted by classical
//! nonlinear least squares. It covers the full pipeline:
//!
//! - [`panel`] — unbalanced region x year panel model, ingestion filters,
//!   marginal averages.
//! - [`moments`] — per (region, year) moment features of daily series.
//! - [`within`] — pooled / region / time / two-way fixed-effects
//!   transformations and degree-of-freedom bookkeeping.
//! - [`slfn`] — the network regression function: forward pass, analytic
//!   parameter gradient (backpropagation), analytic input gradient.
//! - [`estimator`] — OLS and multi-start Levenberg-Marquardt least squares,
//!   sigma-hat, AIC/BIC, Hessian approximations, model selection over the
//!   hidden-layer width.
//! - [`inference`] — delta-method prediction variance, marginal-effect
//!   curves with pointwise confidence intervals, location-specific curves,
//!   and uniform-shift scenario simulation.
//!
//! All numerical code is generic over the [`Scalar`] type; `f64` is the
//! intended workhorse and concrete `*64` aliases are exported at the crate
//! root.

pub mod error;
pub mod estimator;
pub mod inference;
pub mod moments;
pub mod panel;
pub mod slfn;
pub mod within;

use num_traits::{FromPrimitive, ToPrimitive};
use serde::{de::DeserializeOwned, Serialize};

pub use error::{Error, Result};

/// Scalar type the numerical core is generic over. In practice `f32` or `f64`.
///
/// `nalgebra::RealField` supplies the elementary functions and linear-algebra
/// support; the `num-traits` conversions bridge to literals, counts, and
/// serialized values.
pub trait Scalar:
    nalgebra::RealField
    + Copy
    + Default
    + FromPrimitive
    + ToPrimitive
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + std::fmt::Display
{
    /// Machine epsilon of the concrete type.
    const EPS: Self;

    /// Converts an `f64` constant (tolerances, literals) into `Self`.
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("constant not representable in scalar type")
    }

    /// Converts a count into `Self`, for averaging.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count not representable in scalar type")
    }

    /// Lossy view as `f64` (for reporting and quantile lookups).
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

impl Scalar for f32 {
    const EPS: Self = f32::EPSILON;
}

impl Scalar for f64 {
    const EPS: Self = f64::EPSILON;
}

/// Concrete `f64` aliases for the common case.
pub type PanelDataset64 = panel::PanelDataset<f64>;
pub type MomentFeatures64 = moments::MomentFeatures<f64>;
pub type RawDesign64 = within::RawDesign<f64>;
pub type TransformedDesign64 = within::TransformedDesign<f64>;
pub type SlfnParams64 = slfn::SlfnParams<f64>;
pub type FitResult64 = estimator::FitResult<f64>;
pub type MarginalCurve64 = inference::MarginalCurve<f64>;
pub type ScenarioResult64 = inference::ScenarioResult<f64>;
