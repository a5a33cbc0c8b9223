use std::f64::consts::PI;

use crate::error::{Error, Result};

const TWO_OVER_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;

/// Error function. Fails on non-finite input.
pub fn erf(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::domain(format!("erf argument must be finite, got {x}")));
    }
    Ok(erf_unchecked(x))
}

/// Error function without the finiteness check.
///
/// Evaluated on `|x|` and reflected, so `erf_unchecked(-x) == -erf_unchecked(x)`
/// holds bit-for-bit. Accuracy is that of the underlying libm routine
/// (well under 1e-15 absolute).
#[inline]
pub fn erf_unchecked(x: f64) -> f64 {
    let y = libm::erf(x.abs());
    if x.is_sign_negative() {
        -y
    } else {
        y
    }
}

/// d/dx erf(x) = 2/√π · exp(−x²).
#[inline]
pub fn erf_derivative(x: f64) -> f64 {
    TWO_OVER_SQRT_PI * (-x * x).exp()
}

/// Inverse error function on (−1, 1).
///
/// A single-precision polynomial seed is refined with Newton steps on
/// `erf(x) − p`; for |p| > 1/2 the residual is formed through `erfc` to keep
/// relative precision near the tails.
pub fn erfinv(p: f64) -> Result<f64> {
    if !p.is_finite() || p.abs() >= 1.0 {
        return Err(Error::domain(format!("erfinv argument must lie in (-1, 1), got {p}")));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    let q = p.abs();
    let mut x = erfinv_seed(q);
    for _ in 0..12 {
        let residual = if q < 0.5 {
            libm::erf(x) - q
        } else {
            (1.0 - q) - libm::erfc(x)
        };
        let slope = erf_derivative(x);
        if slope == 0.0 {
            break;
        }
        let step = residual / slope;
        x -= step;
        if step.abs() <= 1e-15 * x.abs() {
            break;
        }
    }
    Ok(if p < 0.0 { -x } else { x })
}

// Giles' single-precision approximation (relative error ~1e-7).
fn erfinv_seed(q: f64) -> f64 {
    let w = -((1.0 - q) * (1.0 + q)).ln();
    let p = if w < 5.0 {
        let w = w - 2.5;
        let mut p = 2.810_226_36e-08;
        p = 3.432_739_39e-07 + p * w;
        p = -3.523_387_7e-06 + p * w;
        p = -4.391_506_54e-06 + p * w;
        p = 0.000_218_580_87 + p * w;
        p = -0.001_253_725_03 + p * w;
        p = -0.004_177_681_64 + p * w;
        p = 0.246_640_727 + p * w;
        1.501_409_41 + p * w
    } else {
        let w = w.sqrt() - 3.0;
        let mut p = -0.000_200_214_257;
        p = 0.000_100_950_558 + p * w;
        p = 0.001_349_343_22 + p * w;
        p = -0.003_673_428_44 + p * w;
        p = 0.005_739_507_73 + p * w;
        p = -0.007_622_461_3 + p * w;
        p = 0.009_438_870_47 + p * w;
        p = 1.001_674_06 + p * w;
        2.832_976_82 + p * w
    };
    let x = p * q;
    // the seed degrades as q -> 1; a crude asymptotic fallback keeps Newton in range
    if x.is_finite() {
        x
    } else {
        (-(1.0 - q).ln() - 0.5 * (PI * -(1.0 - q).ln()).ln()).max(0.0).sqrt()
    }
}
