//! Measuring grokking by fitting error-function transitions to accuracy curves.
//!
//! The crate is organised bottom-up:
//! * [`numerics`] holds the shared kernels (error function, tail quadrature,
//!   bisection, symmetric eigensolvers, damped Gauss-Newton).
//! * [`curvefit`] fits `a·erf(s·(t − t*)) + b` to a training or validation
//!   accuracy curve.
//! * [`metrics`] turns a pair of fits into the relative grokking gap and the
//!   two sharpness measures, plus log-log trend fits.
//! * [`linear_dynamics`] generates accuracy curves for the linear
//!   student-teacher model under gradient flow.
//! * [`parity_mlp`] trains a two-layer MLP on concealed parity.
//! * [`cli`] is the experiment harness behind the `grokfit` binary.

pub mod cli;
pub mod curvefit;
pub mod error;
pub mod linear_dynamics;
pub mod metrics;
pub mod numerics;
pub mod parity_mlp;
pub mod rng;

pub use error::{Error, Result};

pub use curvefit::{erf_model, fit_erf, fit_rmse, transition_window, AccuracyCurve, CurveKind, ErfFit, FitSpec};
pub use metrics::{GrokkingMetrics, MetricsRecord, TrendFit};
