//! Grokking measures derived from a pair of error-function fits.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::curvefit::{ErfFit, FitSpec};
use crate::error::{Error, Result};
use crate::numerics::erf_unchecked;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrokkingMetrics {
    /// Relative grokking gap `t*_gen / t*_tr − 1`.
    pub m: f64,
    /// `s_gen / s_tr`.
    pub r_rel: f64,
    /// Maximum slope of the fitted validation curve, `2·a·s_gen/√π`.
    pub r_abs: f64,
    pub fit_train: ErfFit,
    pub fit_gen: ErfFit,
}

impl GrokkingMetrics {
    pub fn from_fits(fit_train: ErfFit, fit_gen: ErfFit) -> Result<Self> {
        Ok(GrokkingMetrics {
            m: relative_gap(&fit_train, &fit_gen)?,
            r_rel: relative_sharpness(&fit_train, &fit_gen)?,
            r_abs: absolute_sharpness(&fit_gen)?,
            fit_train,
            fit_gen,
        })
    }
}

/// `t*_gen / t*_tr − 1`. Negative when validation jumps first.
pub fn relative_gap(fit_train: &ErfFit, fit_gen: &ErfFit) -> Result<f64> {
    for (name, t) in [("training", fit_train.t_star), ("validation", fit_gen.t_star)] {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::domain(format!("{name} jump time {t} must be positive")));
        }
    }
    Ok(fit_gen.t_star / fit_train.t_star - 1.0)
}

/// `s_gen / s_tr`, which is also the ratio of the two curves' maximum slopes.
pub fn relative_sharpness(fit_train: &ErfFit, fit_gen: &ErfFit) -> Result<f64> {
    for (name, s) in [("training", fit_train.s), ("validation", fit_gen.s)] {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::domain(format!("{name} sharpness {s} must be positive")));
        }
    }
    Ok(fit_gen.s / fit_train.s)
}

/// `2·a·s_gen/√π`, the slope of the validation fit at its midpoint.
pub fn absolute_sharpness(fit_gen: &ErfFit) -> Result<f64> {
    if !(fit_gen.s >= 0.0 && fit_gen.s.is_finite()) {
        return Err(Error::domain(format!("sharpness {} must be non-negative", fit_gen.s)));
    }
    Ok(2.0 * fit_gen.a * fit_gen.s / PI.sqrt())
}

/// Accuracy at the jump time, `a·erf(θ) + b`.
pub fn threshold_accuracy(spec: &FitSpec) -> f64 {
    spec.amplitude() * erf_unchecked(spec.theta) + spec.offset()
}

/// Least-squares line through `(ln x, ln y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

pub fn loglog_fit(points: &[(f64, f64)]) -> Result<TrendFit> {
    if points.len() < 2 {
        return Err(Error::domain(format!("log-log fit needs at least 2 points, got {}", points.len())));
    }
    if let Some((x, y)) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())) {
        return Err(Error::domain(format!("log-log fit needs positive coordinates, got ({x}, {y})")));
    }
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = points.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::domain("log-log fit needs at least two distinct x values"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) };
    Ok(TrendFit { slope, intercept, r_squared, n_points: points.len() })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::domain("rank correlation needs equally long samples"));
    }
    if xs.len() < 2 {
        return Err(Error::domain("rank correlation needs at least two points"));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::domain("rank correlation needs finite values"));
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let sxy: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::domain("rank correlation is undefined for a constant sample"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = 0.5 * (i + j) as f64 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRecord {
    /// λ for the linear model, input size for the MLP.
    pub lambda_or_input_size: f64,
    pub seed: u64,
    pub m: f64,
    pub r_rel: f64,
    pub r_abs: f64,
    pub s_train: f64,
    pub s_gen: f64,
    pub t_star_train: f64,
    pub t_star_gen: f64,
    pub rmse_train: f64,
    pub rmse_gen: f64,
}

impl MetricsRecord {
    pub fn new(lambda_or_input_size: f64, seed: u64, metrics: &GrokkingMetrics) -> Self {
        MetricsRecord {
            lambda_or_input_size,
            seed,
            m: metrics.m,
            r_rel: metrics.r_rel,
            r_abs: metrics.r_abs,
            s_train: metrics.fit_train.s,
            s_gen: metrics.fit_gen.s,
            t_star_train: metrics.fit_train.t_star,
            t_star_gen: metrics.fit_gen.t_star,
            rmse_train: metrics.fit_train.rmse_window,
            rmse_gen: metrics.fit_gen.rmse_window,
        }
    }

    /// Key order as serialised.
    pub const KEYS: [&'static str; 11] = [
        "lambda_or_input_size",
        "seed",
        "m",
        "r_rel",
        "r_abs",
        "s_train",
        "s_gen",
        "t_star_train",
        "t_star_gen",
        "rmse_train",
        "rmse_gen",
    ];
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvefit::ErfFit;
    use crate::numerics::erfinv;

    fn fit(s: f64, t_star: f64, a: f64) -> ErfFit {
        ErfFit { s, t_star, a, b: 0.5, theta: 0.0, rmse_window: 0.0, n_window_points: 0 }
    }

    #[test]
    fn gap_examples() {
        assert_eq!(relative_gap(&fit(0.01, 1000.0, 0.5), &fit(0.01, 3000.0, 0.5)).unwrap(), 2.0);
        assert_eq!(relative_gap(&fit(0.01, 1000.0, 0.5), &fit(0.01, 1000.0, 0.5)).unwrap(), 0.0);
        assert!(relative_gap(&fit(0.01, 1000.0, 0.5), &fit(0.01, 500.0, 0.5)).unwrap() < 0.0);
        assert!(relative_gap(&fit(0.01, 0.0, 0.5), &fit(0.01, 500.0, 0.5)).is_err());
    }

    #[test]
    fn sharpness_examples() {
        assert_eq!(relative_sharpness(&fit(0.02, 1.0, 0.5), &fit(0.02, 2.0, 0.5)).unwrap(), 1.0);
        assert_eq!(relative_sharpness(&fit(0.02, 1.0, 0.5), &fit(0.01, 2.0, 0.5)).unwrap(), 0.5);
        assert!(relative_sharpness(&fit(-0.02, 1.0, 0.5), &fit(0.01, 2.0, 0.5)).is_err());

        assert!(absolute_sharpness(&fit(1e-300, 1.0, 0.25)).unwrap() < 1e-299);
        let expected = 0.01 / PI.sqrt();
        assert!((absolute_sharpness(&fit(0.02, 1.0, 0.25)).unwrap() - expected).abs() < 1e-15);
        assert!((absolute_sharpness(&fit(0.01, 1.0, 0.5)).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.005_642).abs() < 1e-6);
    }

    #[test]
    fn absolute_sharpness_is_max_derivative() {
        let f = fit(0.02, 700.0, 0.25);
        // dense scan of the analytic derivative
        let best = (0..=200_000).map(|i| f.derivative(200.0 + 0.005 * i as f64)).fold(0.0, f64::max);
        let r = absolute_sharpness(&f).unwrap();
        assert!(((best - r) / r).abs() < 1e-6);
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(threshold_accuracy(&FitSpec::unit_range()), 0.5);
        assert_eq!(threshold_accuracy(&FitSpec::binary_chance()), 0.75);
        let mut spec = FitSpec::unit_range();
        spec.theta = erfinv(0.8).unwrap();
        assert!((threshold_accuracy(&spec) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn loglog_examples() {
        let sq: Vec<(f64, f64)> = (1..=10).map(|i| (i as f64, (i * i) as f64)).collect();
        let t = loglog_fit(&sq).unwrap();
        assert!((t.slope - 2.0).abs() < 1e-9);
        assert!(t.intercept.abs() < 1e-9);
        assert!((t.r_squared - 1.0).abs() < 1e-9);
        assert_eq!(t.n_points, 10);

        let flat: Vec<(f64, f64)> = (1..=5).map(|i| (i as f64, 3.0)).collect();
        let t = loglog_fit(&flat).unwrap();
        assert!(t.slope.abs() < 1e-12);
        assert!((t.intercept - 3f64.ln()).abs() < 1e-12);

        assert!(loglog_fit(&[(1.0, 1.0)]).is_err());
        assert!(loglog_fit(&[(1.0, 1.0), (0.0, 2.0)]).is_err());
        assert!(loglog_fit(&[(1.0, 1.0), (2.0, -2.0)]).is_err());
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 25.0, 100.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        // ties get average ranks: x ranks (1.5, 1.5, 3), y ranks (1, 2, 3)
        let rho = spearman(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((rho - 0.866_025_403_784_438_6).abs() < 1e-12);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn record_serialises_expected_keys() {
        let m = GrokkingMetrics::from_fits(fit(0.02, 100.0, 0.5), fit(0.01, 300.0, 0.5)).unwrap();
        let rec = MetricsRecord::new(1.05, 3, &m);
        let json = serde_json::to_value(&rec).unwrap();
        let keys: Vec<&str> = json.as_object().unwrap().keys().map(String::as_str).collect();
        let mut expected = MetricsRecord::KEYS.to_vec();
        expected.sort_unstable();
        let mut got = keys.clone();
        got.sort_unstable();
        assert_eq!(got, expected);
        assert_eq!(rec.m, 2.0);
        assert_eq!(rec.r_rel, 0.5);
    }
}
