use crate::error::{Error, Result};

const MAX_BISECTIONS: usize = 400;

/// Finds `t` in `[lo, hi]` with `h(t) = target` for monotone `h`.
///
/// Iterates until the bracket width is at most `rel_tol·|t|` (or `rel_tol`
/// when the bracket straddles zero) and returns the bracket midpoint.
pub fn bisect<F>(h: F, target: f64, lo: f64, hi: f64, rel_tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::Bracket(format!("invalid bracket [{lo}, {hi}]")));
    }
    if !(rel_tol > 0.0) {
        return Err(Error::domain("bisection tolerance must be positive"));
    }
    let mut lo = lo;
    let mut hi = hi;
    let f_lo = h(lo) - target;
    let f_hi = h(hi) - target;
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() || f_lo.is_nan() || f_hi.is_nan() {
        return Err(Error::Bracket(format!(
            "h does not straddle {target} on [{lo}, {hi}] (h(lo) - target = {f_lo:e}, h(hi) - target = {f_hi:e})"
        )));
    }
    let lo_sign = f_lo.signum();
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let width = hi - lo;
        if width <= rel_tol * mid.abs().max(if lo < 0.0 && hi > 0.0 { 1.0 } else { 0.0 }) {
            return Ok(mid);
        }
        if mid <= lo || mid >= hi {
            // bracket cannot shrink further in floating point
            return Ok(mid);
        }
        let f_mid = h(mid) - target;
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_mid.signum() == lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Grows `hi = start·factorᵏ` until `h(hi) ≥ target` (for increasing `h`).
///
/// Returns `(previous, hi)` as a bracket. Fails once `hi` would exceed `limit`.
pub fn expand_bracket<F>(h: F, target: f64, start: f64, factor: f64, limit: f64) -> Result<(f64, f64)>
where
    F: Fn(f64) -> f64,
{
    if !(start > 0.0 && factor > 1.0) {
        return Err(Error::domain("bracket expansion needs start > 0 and factor > 1"));
    }
    if h(start) >= target {
        return Err(Error::Bracket(format!("target {target} already reached at the bracket start {start}")));
    }
    let mut lo = start;
    let mut hi = start * factor;
    while hi <= limit {
        if h(hi) >= target {
            return Ok((lo, hi));
        }
        lo = hi;
        hi *= factor;
    }
    Err(Error::Bracket(format!("target {target} not reached before t = {limit:e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_square() {
        let t = bisect(|t| t, 5.0, 0.0, 10.0, 1e-12).unwrap();
        assert!((t - 5.0).abs() < 1e-10);
        let t = bisect(|t| t * t, 4.0, 0.0, 10.0, 1e-12).unwrap();
        assert!((t - 2.0).abs() < 1e-10);
    }

    #[test]
    fn decreasing_function() {
        let t = bisect(|t| (-t).exp(), 0.5, 0.0, 5.0, 1e-13).unwrap();
        assert!((t - 2f64.ln()).abs() < 1e-11);
    }

    #[test]
    fn no_straddle_is_a_bracket_error() {
        assert!(matches!(bisect(|t| t, 20.0, 0.0, 10.0, 1e-9), Err(Error::Bracket(_))));
    }

    #[test]
    fn expands_geometrically() {
        let (lo, hi) = expand_bracket(|t| t, 1000.0, 1.0, 2.0, 1e12).unwrap();
        assert!(lo < 1000.0 && hi >= 1000.0);
        assert!(expand_bracket(|_| 0.0, 1.0, 1.0, 2.0, 1e12).is_err());
    }
}
