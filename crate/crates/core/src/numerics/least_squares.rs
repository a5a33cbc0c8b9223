use super::matrix::Matrix;
use crate::error::{Error, Result};

const NEAR_CONVERGED: f64 = 1e-8;
const ROUNDING_SLACK: f64 = 1e-13;
const MAX_HALVINGS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussNewtonReport {
    pub params: Vec<f64>,
    pub residual_norm: f64,
    pub initial_residual_norm: f64,
    /// Accepted steps.
    pub iterations: usize,
    pub converged: bool,
}

/// Minimises ‖J·δ + r‖ by Householder QR. Returns δ.
///
/// `jacobian` is m×n with m ≥ n. A column whose reduced norm falls below
/// `1e-13` of its original norm (numerically dependent on the earlier
/// columns) makes the problem degenerate.
pub fn solve_least_squares(jacobian: &Matrix, residual: &[f64]) -> Result<Vec<f64>> {
    let m = jacobian.rows();
    let n = jacobian.cols();
    if residual.len() != m {
        return Err(Error::domain("residual length does not match Jacobian rows"));
    }
    if m < n {
        return Err(Error::FitDegenerate(format!("{m} residuals cannot determine {n} parameters")));
    }
    let mut a = jacobian.clone();
    let mut b: Vec<f64> = residual.iter().map(|r| -r).collect();
    let col_norms: Vec<f64> = (0..n).map(|j| (0..m).map(|i| a[(i, j)] * a[(i, j)]).sum::<f64>().sqrt()).collect();
    if let Some(j) = col_norms.iter().position(|c| !(*c > 0.0) || !c.is_finite()) {
        return Err(Error::FitDegenerate(format!("Jacobian column {j} is zero or non-finite")));
    }
    for k in 0..n {
        let norm = (k..m).map(|i| a[(i, k)] * a[(i, k)]).sum::<f64>().sqrt();
        if norm <= 1e-13 * col_norms[k] {
            return Err(Error::FitDegenerate(format!("normal equations are singular (column {k})")));
        }
        let alpha = if a[(k, k)] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..m).map(|i| a[(i, k)]).collect();
        v[0] -= alpha;
        let vtv: f64 = v.iter().map(|x| x * x).sum();
        if vtv > 0.0 {
            let beta = 2.0 / vtv;
            for j in k..n {
                let s: f64 = beta * v.iter().enumerate().map(|(r, vr)| vr * a[(k + r, j)]).sum::<f64>();
                for (r, vr) in v.iter().enumerate() {
                    a[(k + r, j)] -= s * vr;
                }
            }
            let s: f64 = beta * v.iter().enumerate().map(|(r, vr)| vr * b[k + r]).sum::<f64>();
            for (r, vr) in v.iter().enumerate() {
                b[k + r] -= s * vr;
            }
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let mut s = b[k];
        for j in (k + 1)..n {
            s -= a[(k, j)] * x[j];
        }
        x[k] = s / a[(k, k)];
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::FitDegenerate("least-squares step is not finite".into()));
    }
    Ok(x)
}

fn norm(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Damped Gauss-Newton.
///
/// Each iteration solves the linearised problem by QR and halves the step
/// until the residual norm does not increase (up to rounding once the step is
/// tiny). Stops when the accepted step is
/// below `step_tol` relative to every parameter, when no halving helps, or
/// after `max_iter` iterations.
pub fn gauss_newton<R, J>(residual_fn: R, jacobian_fn: J, initial_params: &[f64], max_iter: usize, step_tol: f64) -> Result<GaussNewtonReport>
where
    R: Fn(&[f64]) -> Vec<f64>,
    J: Fn(&[f64]) -> Matrix,
{
    let mut params = initial_params.to_vec();
    let mut r = residual_fn(&params);
    let mut current = norm(&r);
    if !current.is_finite() {
        return Err(Error::domain("residual is not finite at the initial parameters"));
    }
    let initial_residual_norm = current;
    let mut iterations = 0;
    let mut converged = current == 0.0;

    for _ in 0..max_iter {
        if converged {
            break;
        }
        let jac = jacobian_fn(&params);
        let step = solve_least_squares(&jac, &r)?;
        // relative size of the full step, per component
        let step_rel = params
            .iter()
            .zip(&step)
            .map(|(p, d)| d.abs() / p.abs().max(f64::MIN_POSITIVE))
            .fold(0.0_f64, f64::max);
        // near the optimum the residual change drops below rounding
        let slack = if step_rel <= NEAR_CONVERGED { current * ROUNDING_SLACK } else { 0.0 };
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = params.iter().zip(&step).map(|(p, d)| p + scale * d).collect();
            let trial_r = residual_fn(&trial);
            let trial_norm = norm(&trial_r);
            if trial_norm.is_finite() && trial_norm <= current + slack {
                accepted = Some((trial, trial_r, trial_norm));
                break;
            }
            scale *= 0.5;
        }
        let Some((trial, trial_r, trial_norm)) = accepted else {
            // no descent along the Gauss-Newton direction: stationary to rounding
            converged = true;
            break;
        };
        params = trial;
        r = trial_r;
        current = trial_norm;
        iterations += 1;
        if scale * step_rel <= step_tol || current == 0.0 {
            converged = true;
        }
    }
    Ok(GaussNewtonReport { params, residual_norm: current, initial_residual_norm, iterations, converged })
}
