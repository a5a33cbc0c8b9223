use crate::error::{Error, Result};

const MAX_EVALUATIONS: usize = 5_000_000;
const MAX_DEPTH: u32 = 60;
const MAX_PANELS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureResult {
    pub value: f64,
    pub abs_error_estimate: f64,
    pub evaluations: usize,
}

struct Counter {
    used: usize,
    budget: usize,
}

impl Counter {
    fn eval<F: Fn(f64) -> f64>(&mut self, g: &F, x: f64) -> Option<f64> {
        if self.used >= self.budget {
            return None;
        }
        self.used += 1;
        Some(g(x))
    }
}

/// Adaptive Simpson on `[a, b]` with Richardson correction, to absolute
/// tolerance `abs_tol`.
pub fn adaptive_simpson<F>(g: F, a: f64, b: f64, abs_tol: f64) -> Result<QuadratureResult>
where
    F: Fn(f64) -> f64,
{
    let mut counter = Counter { used: 0, budget: MAX_EVALUATIONS };
    match simpson_panel(&g, a, b, abs_tol, &mut counter) {
        Some((value, err)) => Ok(QuadratureResult { value, abs_error_estimate: err, evaluations: counter.used }),
        None => Err(Error::Quadrature { partial: f64::NAN, evaluations: counter.used }),
    }
}

fn simpson_panel<F: Fn(f64) -> f64>(g: &F, a: f64, b: f64, abs_tol: f64, counter: &mut Counter) -> Option<(f64, f64)> {
    let fa = counter.eval(g, a)?;
    let fb = counter.eval(g, b)?;
    let m = 0.5 * (a + b);
    let fm = counter.eval(g, m)?;
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let mut err = 0.0;
    let value = simpson_recurse(g, a, b, fa, fm, fb, whole, abs_tol, MAX_DEPTH, counter, &mut err)?;
    Some((value, err))
}

#[allow(clippy::too_many_arguments)]
fn simpson_recurse<F: Fn(f64) -> f64>(
    g: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    counter: &mut Counter,
    err: &mut f64,
) -> Option<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = counter.eval(g, lm)?;
    let frm = counter.eval(g, rm)?;
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol || m <= a || m >= b {
        *err += delta.abs() / 15.0;
        return Some(left + right + delta / 15.0);
    }
    let l = simpson_recurse(g, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, counter, err)?;
    let r = simpson_recurse(g, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, counter, err)?;
    Some(l + r)
}

/// ∫_{t0}^∞ g for positive, eventually decaying `g`.
///
/// The half-line is cut into panels whose widths double, starting from
/// `min(t0, 1/decay_hint)` (or `1/decay_hint` when `t0 ≤ 0`). Each panel is
/// integrated with adaptive Simpson. Integration stops once both the
/// exponential tail bound `g(T)/decay_hint` and the geometric tail estimate
/// from successive panel ratios fall below `rel_tol/10` of the accumulated
/// value.
pub fn integrate_tail<F>(g: F, t0: f64, decay_hint: f64, rel_tol: f64) -> Result<QuadratureResult>
where
    F: Fn(f64) -> f64,
{
    if !t0.is_finite() {
        return Err(Error::domain("tail integral start must be finite"));
    }
    if !(decay_hint > 0.0 && decay_hint.is_finite()) {
        return Err(Error::domain("decay hint must be positive and finite"));
    }
    if !(rel_tol > 0.0) {
        return Err(Error::domain("relative tolerance must be positive"));
    }
    let mut counter = Counter { used: 0, budget: MAX_EVALUATIONS };
    let width0 = if t0 > 0.0 { t0.min(1.0 / decay_hint) } else { 1.0 / decay_hint };

    let mut total: f64 = 0.0;
    let mut err_total = 0.0;
    let mut prev_panel: Option<f64> = None;
    let mut lo = t0;
    let mut width = width0;
    for _ in 0..MAX_PANELS {
        let hi = lo + width;
        if !hi.is_finite() {
            break;
        }
        // coarse Simpson sets the panel's tolerance scale
        let coarse = {
            let Some(fa) = counter.eval(&g, lo) else { break };
            let Some(fm) = counter.eval(&g, 0.5 * (lo + hi)) else { break };
            let Some(fb) = counter.eval(&g, hi) else { break };
            (hi - lo) / 6.0 * (fa + 4.0 * fm + fb)
        };
        let scale = coarse.abs().max(1e-3 * total.abs()).max(f64::MIN_POSITIVE);
        let Some((panel, panel_err)) = simpson_panel(&g, lo, hi, 0.5 * rel_tol * scale, &mut counter) else {
            break;
        };
        total += panel;
        err_total += panel_err;

        let threshold = 0.1 * rel_tol * total.abs();
        let geometric_tail = match prev_panel {
            Some(p) if p != 0.0 && panel.abs() < p.abs() => {
                let ratio = panel.abs() / p.abs();
                panel.abs() * ratio / (1.0 - ratio)
            }
            Some(_) if panel == 0.0 => 0.0,
            _ => f64::INFINITY,
        };
        let Some(g_hi) = counter.eval(&g, hi) else { break };
        let exp_tail = g_hi.abs() / decay_hint;
        if geometric_tail <= threshold && exp_tail <= threshold {
            return Ok(QuadratureResult {
                value: total,
                abs_error_estimate: err_total + geometric_tail.max(exp_tail),
                evaluations: counter.used,
            });
        }
        prev_panel = Some(panel);
        lo = hi;
        width *= 2.0;
    }
    Err(Error::Quadrature { partial: total, evaluations: counter.used })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_from_zero() {
        let r = integrate_tail(|x| (-x).exp(), 0.0, 1.0, 1e-10).unwrap();
        assert!((r.value - 1.0).abs() < 1e-10, "{r:?}");
        assert!(r.abs_error_estimate >= 0.0 && r.evaluations >= 1);
    }

    #[test]
    fn inverse_square_from_one() {
        let r = integrate_tail(|x| 1.0 / (x * x), 1.0, 1e-3, 1e-8).unwrap();
        assert!((r.value - 1.0).abs() < 1e-8, "{r:?}");
    }

    #[test]
    fn additivity() {
        let g = |x: f64| (-0.3 * x).exp() / (1.0 + x).powf(1.5);
        let full: f64 = integrate_tail(g, 2.0, 0.3, 1e-11).unwrap().value;
        let head = adaptive_simpson(g, 2.0, 7.0, 1e-14).unwrap().value;
        let tail: f64 = integrate_tail(g, 7.0, 0.3, 1e-11).unwrap().value;
        assert!((full - (head + tail)).abs() <= 2e-11 * full);
    }

    #[test]
    fn simpson_on_polynomial() {
        let r = adaptive_simpson(|x| x * x * x, 0.0, 2.0, 1e-12).unwrap();
        assert!((r.value - 4.0).abs() < 1e-12);
    }

    #[test]
    fn non_decaying_integrand_fails_with_partial() {
        match integrate_tail(|_| 1.0, 0.0, 1.0, 1e-8) {
            Err(Error::Quadrature { partial, evaluations }) => {
                assert!(partial > 0.0);
                assert!(evaluations > 0);
            }
            other => panic!("expected quadrature error, got {other:?}"),
        }
    }

    #[test]
    fn bad_arguments() {
        assert!(integrate_tail(|x| x, 0.0, 0.0, 1e-8).is_err());
        assert!(integrate_tail(|x| x, f64::NAN, 1.0, 1e-8).is_err());
    }
}
