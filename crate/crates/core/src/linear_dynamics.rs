//! Linear student-teacher model under gradient flow.
//!
//! A linear student `S` learns a linear teacher `T` from `N` Gaussian samples
//! in `d_in` dimensions, `λ = d_in/N`. With `D = S − T` and training
//! covariance `Σ`, the losses evolve as
//!
//! ```text
//! L_tr(t)  = D₀ᵀ exp(−4η₀Σt) Σ D₀
//! L_gen(t) = D₀ᵀ exp(−4η₀Σt) D₀          dL_gen/dt = −4η₀ L_tr
//! ```
//!
//! and an example counts as correct when its squared error is below ε, so
//! accuracy is `erf(√(ε / 2L))`. For `η₀t ≫ √λ` the expected training loss is
//! approximately
//!
//! ```text
//! L_tr(t) ≈ exp(−4η₀(1 − √λ)² t) / (16 √π λ^{3/4} (η₀t)^{3/2})
//! ```
//!
//! and `L_gen` follows by integrating the derivative relation from `t` to ∞
//! with `L_gen(∞) = 0`.

use std::f64::consts::PI;

use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curvefit::{fit_erf, AccuracyCurve, CurveKind, FitSpec};
use crate::error::{Error, Result};
use crate::metrics::GrokkingMetrics;
use crate::numerics::{bisect, erf_unchecked, expand_bracket, integrate_tail, spectral_projection, Matrix};
use crate::rng::rng_from_seed;

/// Relative tolerance of the tail integral behind `lgen_approx`.
pub const LGEN_REL_TOL: f64 = 1e-11;
/// Eigenvalues below this are treated as exact zeros.
pub const ZERO_EIGENVALUE: f64 = 1e-12;
/// Hard lower limit of the long-time regime, in units of `√λ/η₀`.
pub const VALIDITY_FLOOR: f64 = 5.0;
/// Below this many `√λ/η₀` the long-time approximation is flagged.
pub const VALIDITY_WARN: f64 = 10.0;
const BRACKET_LIMIT: f64 = 1e12;
const CROSSING_REL_TOL: f64 = 1e-12;
const LOW_ACCURACY: f64 = 0.05;
const HIGH_ACCURACY: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearConfig {
    /// `d_in / N`.
    pub lambda: f64,
    /// Gradient-flow rate.
    pub eta0: f64,
    /// Squared-error threshold for a correct example.
    pub epsilon: f64,
    pub grid_points: usize,
}

impl LinearConfig {
    pub const DEFAULT_GRID_POINTS: usize = 2000;

    /// The configuration used for the λ sweep: η₀ = 0.01, ε = 1e-10.
    pub fn reference(lambda: f64) -> Self {
        LinearConfig { lambda, eta0: 0.01, epsilon: 1e-10, grid_points: Self::DEFAULT_GRID_POINTS }
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        LinearConfig { lambda, ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::domain(format!("lambda = {} must be positive", self.lambda)));
        }
        if self.lambda == 1.0 {
            return Err(Error::domain("lambda = 1 has no exponential decay; choose lambda != 1"));
        }
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return Err(Error::domain(format!("eta0 = {} must be positive", self.eta0)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::domain(format!("epsilon = {} must be positive", self.epsilon)));
        }
        if self.grid_points < 2 {
            return Err(Error::domain("grid_points must be at least 2"));
        }
        Ok(())
    }

    /// Slowest decay rate `4η₀(1 − √λ)²`.
    pub fn decay_rate(&self) -> f64 {
        let gap = 1.0 - self.lambda.sqrt();
        4.0 * self.eta0 * gap * gap
    }

    /// Earliest time at which the long-time approximation is accepted.
    pub fn validity_start(&self) -> f64 {
        VALIDITY_FLOOR * self.lambda.sqrt() / self.eta0
    }
}

/// `erf(√(ε / (2·loss)))`.
pub fn accuracy_of_loss(loss: f64, epsilon: f64) -> Result<f64> {
    if !(loss > 0.0) || loss.is_nan() {
        return Err(Error::domain(format!("loss {loss} must be positive")));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::domain(format!("epsilon {epsilon} must be positive")));
    }
    Ok(accuracy_of_loss_unchecked(loss, epsilon))
}

#[inline]
fn accuracy_of_loss_unchecked(loss: f64, epsilon: f64) -> f64 {
    if loss <= 0.0 {
        return 1.0;
    }
    erf_unchecked((epsilon / (2.0 * loss)).sqrt())
}

/// Long-time approximation of the expected training loss.
///
/// Fails for `t ≤ 0` and below the validity floor `η₀t ≥ 5√λ`.
pub fn ltr_approx(t: f64, cfg: &LinearConfig) -> Result<f64> {
    cfg.validate()?;
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::domain(format!("time {t} must be positive")));
    }
    if t < cfg.validity_start() {
        return Err(Error::domain(format!(
            "eta0*t = {:.4} is below the long-time regime 5*sqrt(lambda) = {:.4}",
            cfg.eta0 * t,
            VALIDITY_FLOOR * cfg.lambda.sqrt()
        )));
    }
    Ok(ltr_formula(t, cfg))
}

#[inline]
fn ltr_formula(t: f64, cfg: &LinearConfig) -> f64 {
    let et = cfg.eta0 * t;
    (-cfg.decay_rate() * t).exp() / (16.0 * PI.sqrt() * cfg.lambda.powf(0.75) * et * et.sqrt())
}

/// `4η₀ ∫_t^∞ L_tr(t′) dt′` using the long-time training loss.
pub fn lgen_approx(t: f64, cfg: &LinearConfig) -> Result<f64> {
    ltr_approx(t, cfg)?;
    let tail = integrate_tail(|u| ltr_formula(u, cfg), t, cfg.decay_rate(), LGEN_REL_TOL)?;
    Ok(4.0 * cfg.eta0 * tail.value)
}

fn train_accuracy(t: f64, cfg: &LinearConfig) -> f64 {
    accuracy_of_loss_unchecked(ltr_formula(t, cfg), cfg.epsilon)
}

fn gen_accuracy(t: f64, cfg: &LinearConfig) -> Result<f64> {
    Ok(accuracy_of_loss_unchecked(lgen_approx(t, cfg)?, cfg.epsilon))
}

/// Times at which the training and validation accuracies reach 1/2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MidpointCrossings {
    pub train: f64,
    pub gen: f64,
}

/// Locates both midpoint crossings by bisection inside brackets grown by
/// doubling from `t = 10√λ/η₀`.
pub fn midpoint_crossings(cfg: &LinearConfig) -> Result<MidpointCrossings> {
    cfg.validate()?;
    let start = VALIDITY_WARN * cfg.lambda.sqrt() / cfg.eta0;
    let train = crossing(|t| train_accuracy(t, cfg), 0.5, start)?;
    let gen = crossing(|t| gen_accuracy(t, cfg).unwrap_or(f64::NAN), 0.5, train)?;
    Ok(MidpointCrossings { train, gen })
}

fn crossing<F: Fn(f64) -> f64>(accuracy: F, target: f64, start: f64) -> Result<f64> {
    let (lo, hi) = expand_bracket(&accuracy, target, start, 2.0, BRACKET_LIMIT)?;
    bisect(&accuracy, target, lo, hi, CROSSING_REL_TOL)
}

/// Log-spaced grid covering both jumps.
///
/// Spans `[t_mid_tr/5, 5·t_mid_gen]`, widened where needed so the training
/// accuracy starts at or below 0.05 and the validation accuracy ends at or
/// above 0.95, and never starting before the validity floor.
pub fn auto_time_grid(cfg: &LinearConfig) -> Result<Vec<f64>> {
    let mid = midpoint_crossings(cfg)?;
    let floor = cfg.validity_start();

    let mut lo = (mid.train / 5.0).max(floor);
    if train_accuracy(lo, cfg) > LOW_ACCURACY {
        if train_accuracy(floor, cfg) > LOW_ACCURACY {
            lo = floor;
        } else {
            lo = bisect(|t| train_accuracy(t, cfg), LOW_ACCURACY, floor, lo, CROSSING_REL_TOL)?;
        }
    }
    if lo < VALIDITY_WARN * cfg.lambda.sqrt() / cfg.eta0 {
        log::warn!(
            "time grid for lambda = {} starts at eta0*t = {:.3}, close to the edge of the long-time regime",
            cfg.lambda,
            cfg.eta0 * lo
        );
    }

    let mut hi = 5.0 * mid.gen;
    if gen_accuracy(hi, cfg)? < HIGH_ACCURACY {
        hi = crossing(|t| gen_accuracy(t, cfg).unwrap_or(f64::NAN), HIGH_ACCURACY, hi)?;
    }
    if hi > BRACKET_LIMIT {
        return Err(Error::Bracket(format!("time grid would extend to {hi:e}")));
    }
    Ok(log_space(lo, hi, cfg.grid_points))
}

fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    let mut out: Vec<f64> = (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect();
    out[0] = lo;
    out[n - 1] = hi;
    out
}

/// Training and validation accuracy curves on the automatic grid.
pub fn analytic_curves(cfg: &LinearConfig) -> Result<(AccuracyCurve, AccuracyCurve)> {
    if cfg.epsilon > 1e-4 {
        log::warn!("epsilon = {:e} is large; both jumps may leave the long-time regime", cfg.epsilon);
    }
    let times = auto_time_grid(cfg)?;
    let train: Vec<f64> = times.iter().map(|&t| train_accuracy(t, cfg)).collect();
    let gen = times.iter().map(|&t| gen_accuracy(t, cfg)).collect::<Result<Vec<f64>>>()?;
    Ok((
        AccuracyCurve::new(times.clone(), train, CurveKind::Train)?,
        AccuracyCurve::new(times, gen, CurveKind::Validation)?,
    ))
}

/// One sampled training set and initial weight difference.
#[derive(Debug, Clone)]
pub struct FiniteSizeInstance {
    pub d_in: usize,
    pub n_samples: usize,
    /// `XᵀX/N`.
    pub sigma_tr: Matrix,
    /// `S₀ − T`.
    pub d0: Vec<f64>,
    pub seed: u64,
}

/// Draws `X` (N×d_in, standard normal) with `N = round(d_in/λ)` and
/// `D₀ ~ N(0, I/d_in)`, so `E‖D₀‖² = 1`.
pub fn sample_instance(d_in: usize, lambda: f64, seed: u64) -> Result<FiniteSizeInstance> {
    if d_in == 0 {
        return Err(Error::domain("d_in must be positive"));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::domain(format!("lambda = {lambda} must be positive")));
    }
    let n_samples = (d_in as f64 / lambda).round() as usize;
    if n_samples == 0 {
        return Err(Error::domain(format!("d_in/lambda = {} rounds to zero samples", d_in as f64 / lambda)));
    }
    let mut rng = rng_from_seed(seed);
    let x: Vec<f64> = (0..n_samples * d_in).map(|_| StandardNormal.sample(&mut rng)).collect();
    let d0_dist = Normal::new(0.0, (1.0 / d_in as f64).sqrt()).expect("positive variance");
    let d0: Vec<f64> = (0..d_in).map(|_| d0_dist.sample(&mut rng)).collect();

    let mut sigma = vec![0.0; d_in * d_in];
    let inv_n = 1.0 / n_samples as f64;
    // Σ = (1/N) Xᵀ X with X row-major N×d_in
    unsafe {
        matrixmultiply::dgemm(
            d_in,
            n_samples,
            d_in,
            inv_n,
            x.as_ptr(),
            1,
            d_in as isize,
            x.as_ptr(),
            d_in as isize,
            1,
            0.0,
            sigma.as_mut_ptr(),
            d_in as isize,
            1,
        );
    }
    for i in 0..d_in {
        for j in (i + 1)..d_in {
            let avg = 0.5 * (sigma[i * d_in + j] + sigma[j * d_in + i]);
            sigma[i * d_in + j] = avg;
            sigma[j * d_in + i] = avg;
        }
    }
    Ok(FiniteSizeInstance { d_in, n_samples, sigma_tr: Matrix::from_row_major(d_in, d_in, sigma), d0, seed })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossCurve {
    pub times: Vec<f64>,
    pub l_train: Vec<f64>,
    pub l_gen: Vec<f64>,
    /// `l_gen` minus its null-space floor, summed without the floor so it
    /// keeps full relative precision after `l_gen` has flattened out.
    pub l_gen_transient: Vec<f64>,
}

/// The instance's eigenvalues and the squared coordinates of `D₀` in its
/// eigenbasis; all the exact dynamics need.
#[derive(Debug, Clone)]
pub struct InstanceSpectrum {
    pub eigenvalues: Vec<f64>,
    pub weights: Vec<f64>,
}

impl InstanceSpectrum {
    pub fn of(instance: &FiniteSizeInstance) -> Result<Self> {
        let proj = spectral_projection(&instance.sigma_tr, &instance.d0)?;
        let eigenvalues = proj.eigenvalues.iter().map(|&l| if l < ZERO_EIGENVALUE { 0.0 } else { l }).collect();
        let weights = proj.coefficients.iter().map(|c| c * c).collect();
        Ok(InstanceSpectrum { eigenvalues, weights })
    }

    pub fn train_loss(&self, eta0: f64, t: f64) -> f64 {
        self.eigenvalues
            .iter()
            .zip(&self.weights)
            .filter(|(l, _)| **l > 0.0)
            .map(|(l, w)| w * l * (-4.0 * eta0 * l * t).exp())
            .sum()
    }

    pub fn gen_loss(&self, eta0: f64, t: f64) -> f64 {
        self.null_mass() + self.gen_loss_transient(eta0, t)
    }

    /// The decaying part of [`Self::gen_loss`].
    pub fn gen_loss_transient(&self, eta0: f64, t: f64) -> f64 {
        self.eigenvalues
            .iter()
            .zip(&self.weights)
            .filter(|(l, _)| **l > 0.0)
            .map(|(l, w)| w * (-4.0 * eta0 * l * t).exp())
            .sum()
    }

    /// Mass of `D₀` in the null space; the floor of `L_gen`.
    pub fn null_mass(&self) -> f64 {
        self.eigenvalues.iter().zip(&self.weights).filter(|(l, _)| **l == 0.0).map(|(_, w)| w).sum()
    }
}

/// Exact finite-size losses on `times` (non-negative, strictly increasing).
pub fn exact_losses(instance: &FiniteSizeInstance, eta0: f64, times: &[f64]) -> Result<LossCurve> {
    if !(eta0 > 0.0 && eta0.is_finite()) {
        return Err(Error::domain(format!("eta0 = {eta0} must be positive")));
    }
    if times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(Error::domain("times must be finite and non-negative"));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain("times must be strictly increasing"));
    }
    let spectrum = InstanceSpectrum::of(instance)?;
    Ok(LossCurve {
        times: times.to_vec(),
        l_train: times.iter().map(|&t| spectrum.train_loss(eta0, t)).collect(),
        l_gen: times.iter().map(|&t| spectrum.gen_loss(eta0, t)).collect(),
        l_gen_transient: times.iter().map(|&t| spectrum.gen_loss_transient(eta0, t)).collect(),
    })
}

/// Mean exact training loss over independent instances, one per seed.
pub fn mean_exact_train_loss(d_in: usize, lambda: f64, eta0: f64, seeds: &[u64], times: &[f64]) -> Result<Vec<f64>> {
    if seeds.is_empty() {
        return Err(Error::domain("at least one seed is required"));
    }
    let curves = seeds
        .par_iter()
        .map(|&seed| {
            let instance = sample_instance(d_in, lambda, seed)?;
            exact_losses(&instance, eta0, times).map(|c| c.l_train)
        })
        .collect::<Result<Vec<_>>>()?;
    let k = curves.len() as f64;
    Ok((0..times.len()).map(|i| curves.iter().map(|c| c[i]).sum::<f64>() / k).collect())
}

/// Curves and measures for one λ.
#[derive(Debug, Clone)]
pub struct LinearRun {
    pub config: LinearConfig,
    pub train: AccuracyCurve,
    pub validation: AccuracyCurve,
    pub metrics: GrokkingMetrics,
}

/// Result of one λ in a sweep; failures are kept, not propagated.
#[derive(Debug)]
pub struct LambdaOutcome {
    pub lambda: f64,
    pub result: Result<LinearRun>,
}

pub fn run_lambda(cfg: &LinearConfig, spec: &FitSpec) -> Result<LinearRun> {
    let (train, validation) = analytic_curves(cfg)?;
    let fit_train = fit_erf(&train, spec)?;
    let fit_gen = fit_erf(&validation, spec)?;
    let metrics = GrokkingMetrics::from_fits(fit_train, fit_gen)?;
    Ok(LinearRun { config: *cfg, train, validation, metrics })
}

/// Runs every λ (in parallel), keeping input order.
pub fn lambda_sweep(lambdas: &[f64], template: &LinearConfig, spec: &FitSpec) -> Result<Vec<LambdaOutcome>> {
    let above = lambdas.iter().filter(|&&l| l > 1.0).count();
    if above != 0 && above != lambdas.len() {
        return Err(Error::domain("lambda list must lie entirely above or entirely below 1"));
    }
    Ok(lambdas
        .par_iter()
        .map(|&lambda| LambdaOutcome { lambda, result: run_lambda(&template.with_lambda(lambda), spec) })
        .collect())
}
