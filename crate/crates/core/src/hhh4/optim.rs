//! Unconstrained maximization: BFGS with Armijo backtracking, finished by
//! damped Newton steps on the analytic Hessian.

use nalgebra::{DMatrix, DVector};

use crate::error::FitError;

/// Value, gradient and (on request) Hessian of the objective.
pub(crate) type Evaluation = (f64, Vec<f64>, Option<DMatrix<f64>>);

#[derive(Clone, Copy, Debug)]
pub(crate) struct OptimOptions {
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Gradient norm at which BFGS hands over to Newton.
    pub switch_tol: f64,
    /// Largest coordinate change of one step.
    pub max_step: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions { grad_tol: 1e-6, max_iter: 500, switch_tol: 1e-2, max_step: 5.0 }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Optimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub hessian: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
}

const ARMIJO: f64 = 1e-4;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn capped(d: DVector<f64>, max_step: f64) -> DVector<f64> {
    let big = d.amax();
    if big > max_step {
        d * (max_step / big)
    } else {
        d
    }
}

/// Backtracking along `d` from `x`; returns the accepted point.
///
/// Besides the Armijo condition, a step is accepted when the objective is
/// flat to rounding (within `flat_tol` relative) and the gradient shrinks;
/// this lets Newton steps finish at the optimum.
fn line_search<F>(
    f: &F,
    x: &[f64],
    value: f64,
    grad: &[f64],
    d: &DVector<f64>,
    flat_tol: f64,
) -> Option<(Vec<f64>, f64, Vec<f64>)>
where
    F: Fn(&[f64], bool) -> Result<Evaluation, FitError>,
{
    let slope: f64 = grad.iter().zip(d.iter()).map(|(g, d)| g * d).sum();
    if slope <= 0.0 {
        return None;
    }
    let gnorm = norm(grad);
    let mut step = 1.0;
    for _ in 0..60 {
        let xn: Vec<f64> = x.iter().zip(d.iter()).map(|(a, b)| a + step * b).collect();
        if let Ok((vn, gn, _)) = f(&xn, false) {
            if vn >= value + ARMIJO * step * slope {
                return Some((xn, vn, gn));
            }
            if (vn - value).abs() <= flat_tol * (1.0 + value.abs()) && norm(&gn) < gnorm {
                return Some((xn, vn, gn));
            }
        }
        step *= 0.5;
    }
    None
}

/// Maximizes `f` from `x0`. `converged` means the final gradient norm is
/// below `grad_tol` and the Hessian is negative definite.
pub(crate) fn maximize<F>(f: F, x0: &[f64], opts: &OptimOptions) -> Result<Optimum, FitError>
where
    F: Fn(&[f64], bool) -> Result<Evaluation, FitError>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut value, mut grad, _) = f(&x, false)?;
    let mut iterations = 0;

    // BFGS on -f; `inv` approximates the inverse Hessian of -f.
    let mut inv = DMatrix::<f64>::identity(n, n);
    let mut first = true;
    while iterations < opts.max_iter && norm(&grad) > opts.switch_tol.max(opts.grad_tol) {
        iterations += 1;
        let g = DVector::from_column_slice(&grad);
        let mut d = &inv * &g;
        if g.dot(&d) <= 0.0 {
            inv = DMatrix::identity(n, n);
            d = g.clone();
        }
        let d = capped(d, opts.max_step);
        let Some((xn, vn, gn)) = line_search(&f, &x, value, &grad, &d, 0.0) else {
            break;
        };
        let s = DVector::from_iterator(n, xn.iter().zip(&x).map(|(a, b)| a - b));
        let y = DVector::from_iterator(n, grad.iter().zip(&gn).map(|(a, b)| a - b));
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if first {
                inv *= sy / y.dot(&y);
                first = false;
            }
            let rho = 1.0 / sy;
            let hy = &inv * &y;
            let yhy = y.dot(&hy);
            inv += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        x = xn;
        value = vn;
        grad = gn;
    }

    // Newton with Levenberg damping.
    let mut damping = 0.0;
    let (mut hessian, mut newton_ok) = loop {
        let (v, g, h) = f(&x, true)?;
        value = v;
        grad = g;
        let h = h.expect("hessian requested");
        if norm(&grad) <= opts.grad_tol || iterations >= opts.max_iter {
            break (h, true);
        }
        iterations += 1;
        let neg = -&h;
        let scale = neg.diagonal().amax().max(1.0);
        let mut moved = false;
        for _ in 0..30 {
            let shifted = &neg + DMatrix::identity(n, n) * (damping * scale);
            if let Some(ch) = shifted.cholesky() {
                let d = capped(ch.solve(&DVector::from_column_slice(&grad)), opts.max_step);
                if let Some((xn, vn, _)) = line_search(&f, &x, value, &grad, &d, 1e-12) {
                    x = xn;
                    value = vn;
                    moved = true;
                    damping *= 0.1;
                    if damping < 1e-12 {
                        damping = 0.0;
                    }
                    break;
                }
            }
            damping = if damping == 0.0 { 1e-8 } else { damping * 10.0 };
        }
        if !moved {
            break (h, false);
        }
    };
    if !newton_ok {
        let (v, g, h) = f(&x, true)?;
        value = v;
        grad = g;
        hessian = h.expect("hessian requested");
        newton_ok = norm(&grad) <= opts.grad_tol;
    }
    let definite = (-&hessian).cholesky().is_some();
    Ok(Optimum {
        converged: newton_ok && norm(&grad) <= opts.grad_tol && definite,
        x,
        value,
        grad,
        hessian,
        iterations,
    })
}
