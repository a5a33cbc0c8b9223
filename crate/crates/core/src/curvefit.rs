//! Accuracy curves and the error-function fit `A(t) = a·erf(s·(t − t*) + θ) + b`.
//!
//! Only the sharpness `s` and jump time `t*` are fitted. The amplitude and
//! offset come from the accuracy range `[c, d]` as `a = (d − c)/2`,
//! `b = (c + d)/2`, so the fitted curve spans exactly that range.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{erf_derivative, erf_unchecked, erfinv, gauss_newton, Matrix};

/// Minimum number of samples strictly inside the accuracy band.
pub const MIN_WINDOW_POINTS: usize = 5;

const GN_MAX_ITER: usize = 200;
const GN_STEP_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveKind {
    Train,
    Validation,
}

/// A training or validation accuracy time series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCurve {
    epochs: Vec<f64>,
    values: Vec<f64>,
    kind: CurveKind,
}

impl AccuracyCurve {
    /// Epochs must be finite, non-negative and strictly increasing; values
    /// must lie in `[0, 1]`; at least two samples.
    pub fn new(epochs: Vec<f64>, values: Vec<f64>, kind: CurveKind) -> Result<Self> {
        if epochs.len() != values.len() {
            return Err(Error::domain(format!("{} epochs but {} accuracy values", epochs.len(), values.len())));
        }
        if epochs.len() < 2 {
            return Err(Error::domain("an accuracy curve needs at least two samples"));
        }
        if epochs.iter().any(|e| !e.is_finite() || *e < 0.0) {
            return Err(Error::domain("epochs must be finite and non-negative"));
        }
        if let Some(i) = epochs.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::domain(format!("epochs are not strictly increasing at index {}", i + 1)));
        }
        if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::domain(format!("accuracy {} at index {i} is outside [0, 1]", values[i])));
        }
        Ok(AccuracyCurve { epochs, values, kind })
    }

    pub fn epochs(&self) -> &[f64] {
        &self.epochs
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> CurveKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// Same values on epochs mapped through `t ↦ scale·t + shift`.
    pub fn remap_epochs(&self, scale: f64, shift: f64) -> Result<Self> {
        let epochs = self.epochs.iter().map(|t| scale * t + shift).collect();
        AccuracyCurve::new(epochs, self.values.clone(), self.kind)
    }
}

/// Fixed part of the fit: the accuracy range `[c, d]`, the threshold offset
/// θ and the window/clamp settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSpec {
    /// Baseline accuracy `c`.
    pub baseline: f64,
    /// Saturated accuracy `d`.
    pub max_accuracy: f64,
    pub theta: f64,
    /// Fraction of `d − c` trimmed from each end of the band that defines the
    /// transition window.
    pub transition_margin: f64,
    /// Clamp applied to the normalised accuracy before `erfinv`.
    pub clamp_delta: f64,
}

impl FitSpec {
    pub const DEFAULT_MARGIN: f64 = 0.05;
    pub const DEFAULT_CLAMP: f64 = 1e-4;

    pub fn new(baseline: f64, max_accuracy: f64) -> Result<Self> {
        let spec = FitSpec {
            baseline,
            max_accuracy,
            theta: 0.0,
            transition_margin: Self::DEFAULT_MARGIN,
            clamp_delta: Self::DEFAULT_CLAMP,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Range `[0, 1]` of the linear student-teacher accuracies.
    pub fn unit_range() -> Self {
        FitSpec::new(0.0, 1.0).expect("valid range")
    }

    /// Range `[1/2, 1]` for binary classification from chance level.
    pub fn binary_chance() -> Self {
        FitSpec::new(0.5, 1.0).expect("valid range")
    }

    pub fn validate(&self) -> Result<()> {
        let FitSpec { baseline: c, max_accuracy: d, theta, transition_margin, clamp_delta } = *self;
        if !(0.0..1.0).contains(&c) {
            return Err(Error::domain(format!("baseline accuracy c = {c} must lie in [0, 1)")));
        }
        if !(d > c && d <= 1.0) {
            return Err(Error::domain(format!("max accuracy d = {d} must lie in (c, 1]")));
        }
        if !theta.is_finite() {
            return Err(Error::domain("theta must be finite"));
        }
        if !(transition_margin > 0.0 && transition_margin < 0.5) {
            return Err(Error::domain(format!("transition margin {transition_margin} must lie in (0, 0.5)")));
        }
        if !(clamp_delta > 0.0 && clamp_delta < 1.0) {
            return Err(Error::domain(format!("clamp delta {clamp_delta} must lie in (0, 1)")));
        }
        Ok(())
    }

    /// `a = (d − c)/2`.
    pub fn amplitude(&self) -> f64 {
        0.5 * (self.max_accuracy - self.baseline)
    }

    /// `b = (c + d)/2`.
    pub fn offset(&self) -> f64 {
        0.5 * (self.baseline + self.max_accuracy)
    }
}

/// Fitted error-function transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErfFit {
    /// Sharpness, per epoch.
    pub s: f64,
    /// Jump time, in epochs.
    pub t_star: f64,
    pub a: f64,
    pub b: f64,
    #[serde(default)]
    pub theta: f64,
    /// Residual RMSE over the transition window.
    pub rmse_window: f64,
    pub n_window_points: usize,
}

impl ErfFit {
    /// A fit with the given parameters and no residual information.
    pub fn from_parameters(s: f64, t_star: f64, spec: &FitSpec) -> Self {
        ErfFit {
            s,
            t_star,
            a: spec.amplitude(),
            b: spec.offset(),
            theta: spec.theta,
            rmse_window: 0.0,
            n_window_points: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s > 0.0 && self.s.is_finite()) {
            return Err(Error::domain(format!("sharpness s = {} must be positive", self.s)));
        }
        if !(self.t_star > 0.0 && self.t_star.is_finite()) {
            return Err(Error::domain(format!("jump time t* = {} must be positive", self.t_star)));
        }
        Ok(())
    }

    /// d/dt of the model.
    pub fn derivative(&self, t: f64) -> f64 {
        self.a * self.s * erf_derivative(self.s * (t - self.t_star) + self.theta)
    }
}

/// `a·erf(s·(t − t*) + θ) + b`, with θ taken from the [`FitSpec`] used for
/// the fit (zero by default).
pub fn erf_model(fit: &ErfFit, t: f64) -> f64 {
    fit.a * erf_unchecked(fit.s * (t - fit.t_star) + fit.theta) + fit.b
}

/// The index range used for fitting.
///
/// Finds maximal runs of samples strictly inside
/// `(c + margin·(d − c), d − margin·(d − c))`, prefers the run containing the
/// last crossing of the midpoint `b` (otherwise the longest run, earliest on
/// ties), and widens it by one sample on each side where available.
pub fn transition_window(curve: &AccuracyCurve, spec: &FitSpec) -> Result<Range<usize>> {
    spec.validate()?;
    let span = spec.max_accuracy - spec.baseline;
    let lower = spec.baseline + spec.transition_margin * span;
    let upper = spec.max_accuracy - spec.transition_margin * span;
    let values = curve.values();
    let inside = |v: f64| v > lower && v < upper;

    let mut runs: Vec<Range<usize>> = Vec::new();
    let mut i = 0;
    while i < values.len() {
        if inside(values[i]) {
            let start = i;
            while i < values.len() && inside(values[i]) {
                i += 1;
            }
            runs.push(start..i);
        } else {
            i += 1;
        }
    }

    let mid = spec.offset();
    let last_crossing = (0..values.len().saturating_sub(1)).rev().find(|&i| {
        let (x, y) = (values[i] - mid, values[i + 1] - mid);
        (x < 0.0 && y >= 0.0) || (x >= 0.0 && y < 0.0)
    });
    let chosen = last_crossing
        .and_then(|i| runs.iter().find(|r| r.contains(&i) && r.contains(&(i + 1))).cloned())
        .or_else(|| {
            runs.iter()
                .fold(None::<&Range<usize>>, |best, r| match best {
                    Some(b) if b.len() >= r.len() => Some(b),
                    _ => Some(r),
                })
                .cloned()
        });

    let run = match chosen {
        Some(r) if r.len() >= MIN_WINDOW_POINTS => r,
        other => {
            return Err(Error::InsufficientTransition {
                points: other.map_or(0, |r| r.len()),
                required: MIN_WINDOW_POINTS,
            })
        }
    };
    let start = run.start.saturating_sub(1);
    let end = (run.end + 1).min(values.len());
    Ok(start..end)
}

/// Least-squares fit of `(s, t*)` over the transition window.
///
/// The initial guess comes from linearising: the normalised accuracy
/// `(A − b)/a`, clamped to `±(1 − clamp_delta)`, is mapped through `erfinv`
/// and regressed on `t`. Damped Gauss-Newton then refines on the untransformed
/// residuals.
pub fn fit_erf(curve: &AccuracyCurve, spec: &FitSpec) -> Result<ErfFit> {
    let window = transition_window(curve, spec)?;
    let ts = &curve.epochs()[window.clone()];
    let ys = &curve.values()[window.clone()];
    let a = spec.amplitude();
    let b = spec.offset();
    let theta = spec.theta;

    // erfinv((A − b)/a) = s·t − s·t* + θ
    let bound = 1.0 - spec.clamp_delta;
    let zs = ys
        .iter()
        .map(|y| erfinv(((y - b) / a).clamp(-bound, bound)))
        .collect::<Result<Vec<f64>>>()?;
    let (slope, intercept) = ordinary_least_squares(ts, &zs)?;
    if !(slope > 0.0) {
        return Err(Error::FitDegenerate(format!("linearised slope {slope:e} is not positive; curve is not rising")));
    }
    let s0 = slope;
    let t0 = (theta - intercept) / slope;

    let residual = |p: &[f64]| -> Vec<f64> {
        ts.iter().zip(ys).map(|(t, y)| a * erf_unchecked(p[0] * (t - p[1]) + theta) + b - y).collect()
    };
    let jacobian = |p: &[f64]| -> Matrix {
        let mut jac = Matrix::zeros(ts.len(), 2);
        for (i, t) in ts.iter().enumerate() {
            let g = a * erf_derivative(p[0] * (t - p[1]) + theta);
            jac[(i, 0)] = g * (t - p[1]);
            jac[(i, 1)] = -g * p[0];
        }
        jac
    };
    let report = gauss_newton(residual, jacobian, &[s0, t0], GN_MAX_ITER, GN_STEP_TOL)?;
    let (s, t_star) = (report.params[0], report.params[1]);
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::FitDegenerate(format!("fitted sharpness {s:e} is not positive")));
    }
    if !(t_star > 0.0 && t_star.is_finite()) {
        return Err(Error::FitDegenerate(format!("fitted jump time {t_star:e} is not positive")));
    }
    let mut fit = ErfFit { s, t_star, a, b, theta, rmse_window: 0.0, n_window_points: window.len() };
    fit.rmse_window = fit_rmse(&fit, curve, window)?;
    Ok(fit)
}

/// RMS of `value − model` over `window`.
pub fn fit_rmse(fit: &ErfFit, curve: &AccuracyCurve, window: Range<usize>) -> Result<f64> {
    if window.is_empty() {
        return Err(Error::domain("RMSE window is empty"));
    }
    if window.end > curve.len() {
        return Err(Error::domain(format!("window {window:?} exceeds curve length {}", curve.len())));
    }
    let n = window.len() as f64;
    let ss: f64 = window
        .map(|i| {
            let r = curve.values()[i] - erf_model(fit, curve.epochs()[i]);
            r * r
        })
        .sum();
    Ok((ss / n).sqrt())
}

fn ordinary_least_squares(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::FitDegenerate("window has no spread in time".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}
