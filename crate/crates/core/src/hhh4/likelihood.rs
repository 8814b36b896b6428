use nalgebra::DMatrix;
use statrs::function::factorial::ln_factorial;
use statrs::function::gamma::{digamma, ln_gamma};

use super::design::{lag_weights, Design, Predictor};
use super::SurveillanceSeries;
use crate::error::FitError;

/// Predictors above this are treated as overflow.
const ETA_MAX: f64 = 700.0;

/// Below this count the gamma-function differences are summed exactly.
const EXACT_SUM_MAX: u64 = 64;

/// Log-density of a negative binomial with mean `lambda` and size `psi`
/// (variance `lambda + lambda^2 / psi`). `psi = inf` gives the Poisson.
pub fn negbin_log_density(y: u64, lambda: f64, psi: f64) -> f64 {
    let yf = y as f64;
    if psi.is_infinite() {
        return yf * lambda.ln() - lambda - ln_factorial(y);
    }
    let ratio = lambda / psi;
    let y_term = if y == 0 { 0.0 } else { yf * (lambda / (psi + lambda)).ln() };
    gamma_ratio_ln(y, psi) - ln_factorial(y) - psi * ratio.ln_1p() + y_term
}

/// `ln Gamma(y + psi) - ln Gamma(psi)`.
fn gamma_ratio_ln(y: u64, psi: f64) -> f64 {
    if y <= EXACT_SUM_MAX {
        (0..y).map(|k| (psi + k as f64).ln()).sum()
    } else {
        ln_gamma(y as f64 + psi) - ln_gamma(psi)
    }
}

/// `digamma(y + psi) - digamma(psi)`.
fn digamma_diff(y: u64, psi: f64) -> f64 {
    if y <= EXACT_SUM_MAX {
        (0..y).map(|k| 1.0 / (psi + k as f64)).sum()
    } else {
        digamma(y as f64 + psi) - digamma(psi)
    }
}

/// `trigamma(y + psi) - trigamma(psi)`.
fn trigamma_diff(y: u64, psi: f64) -> f64 {
    if y <= EXACT_SUM_MAX {
        -(0..y).map(|k| (psi + k as f64).powi(-2)).sum::<f64>()
    } else {
        trigamma(y as f64 + psi) - trigamma(psi)
    }
}

fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let z = 1.0 / (x * x);
    acc + 1.0 / x + z / 2.0 + z / x * (1.0 / 6.0 - z * (1.0 / 30.0 - z * (1.0 / 42.0 - z * (1.0 / 30.0 - z * 5.0 / 66.0))))
}

/// Lag-weighted past counts `sum_q w_q Y_{g,t-q}` for `t >= Q`, row-major
/// `[t - Q][g]`.
pub fn lagged_sums(data: &SurveillanceSeries, weights: &[f64]) -> Vec<f64> {
    let q = weights.len();
    let g = data.units();
    let mut out = Vec::with_capacity(data.len().saturating_sub(q) * g);
    for t in q..data.len() {
        for unit in 0..g {
            out.push(weights.iter().enumerate().map(|(i, w)| w * data.value(t - 1 - i, unit)).sum());
        }
    }
    out
}

/// Likelihood evaluator for a fixed lag decay `p`.
pub(crate) struct Model<'a> {
    pub design: &'a Design,
    pub data: &'a SurveillanceSeries,
    ytilde: Vec<f64>,
}

/// One additive piece `exp(eta) * driver` of a conditional mean.
struct Piece<'a> {
    value: f64,
    pred: &'a Predictor,
}

impl<'a> Model<'a> {
    pub fn new(design: &'a Design, data: &'a SurveillanceSeries, p: f64) -> Result<Model<'a>, FitError> {
        if data.units() != design.units || data.period != design.period {
            return Err(FitError::Data("data do not match the design".into()));
        }
        if data.len() <= design.lags {
            return Err(FitError::Data(format!("need more than {} time points", design.lags)));
        }
        let w = lag_weights(p, design.lags)?;
        Ok(Model { design, data, ytilde: lagged_sums(data, &w) })
    }

    fn n_obs(&self) -> usize {
        self.data.len() - self.design.lags
    }

    fn pieces(&self, theta: &[f64], i: usize, g: usize) -> Result<Vec<Piece<'a>>, FitError> {
        let d = self.design;
        let s = self.data.phase(i + d.lags);
        let units = d.units;
        let own_driver = self.ytilde[i * units + g];
        let mut out = Vec::with_capacity(3);
        let mut push = |pred: &'a Predictor, driver: f64| -> Result<(), FitError> {
            let eta = pred.eta(theta);
            if !(eta <= ETA_MAX) {
                return Err(FitError::Overflow);
            }
            out.push(Piece { value: eta.exp() * driver, pred });
            Ok(())
        };
        push(&d.endemic[s][g], 1.0)?;
        if let Some(own) = &d.own {
            push(&own[s][g], own_driver)?;
        }
        if let Some(cross) = &d.cross {
            let total: f64 = self.ytilde[i * units..(i + 1) * units].iter().sum();
            push(&cross[s][g], total - own_driver)?;
        }
        Ok(out)
    }

    /// `lambda[i][g]` for `t = Q + i`.
    pub fn means(&self, theta: &[f64]) -> Result<Vec<Vec<f64>>, FitError> {
        (0..self.n_obs())
            .map(|i| {
                (0..self.design.units)
                    .map(|g| Ok(self.pieces(theta, i, g)?.iter().map(|p| p.value).sum()))
                    .collect()
            })
            .collect()
    }

    pub fn loglik(&self, theta: &[f64]) -> Result<f64, FitError> {
        let mut total = 0.0;
        for i in 0..self.n_obs() {
            for g in 0..self.design.units {
                let lambda: f64 = self.pieces(theta, i, g)?.iter().map(|p| p.value).sum();
                let psi = theta[self.design.psi_index[g]].exp();
                total += negbin_log_density(self.data.counts[i + self.design.lags][g], lambda, psi);
            }
        }
        if total.is_finite() {
            Ok(total)
        } else {
            Err(FitError::Overflow)
        }
    }

    /// Log-likelihood, gradient and optionally the Hessian.
    pub fn derivatives(
        &self,
        theta: &[f64],
        hessian: bool,
    ) -> Result<(f64, Vec<f64>, Option<DMatrix<f64>>), FitError> {
        let n = theta.len();
        let mut value = 0.0;
        let mut grad = vec![0.0; n];
        let mut hess = if hessian { Some(DMatrix::zeros(n, n)) } else { None };
        let mut dlam: Vec<(usize, f64)> = Vec::new();
        for i in 0..self.n_obs() {
            for g in 0..self.design.units {
                let pieces = self.pieces(theta, i, g)?;
                let lambda: f64 = pieces.iter().map(|p| p.value).sum();
                let u = self.design.psi_index[g];
                let psi = theta[u].exp();
                let y = self.data.counts[i + self.design.lags][g];
                let yf = y as f64;
                value += negbin_log_density(y, lambda, psi);

                let pl = psi + lambda;
                let l_lam = yf / lambda - (psi + yf) / pl;
                let l_psi = digamma_diff(y, psi) - (lambda / psi).ln_1p() + 1.0 - (psi + yf) / pl;
                let l_u = psi * l_psi;

                dlam.clear();
                for p in &pieces {
                    for (j, x) in &p.pred.coef {
                        dlam.push((*j, p.value * x));
                    }
                }
                for (j, d) in &dlam {
                    grad[*j] += l_lam * d;
                }
                grad[u] += l_u;

                if let Some(h) = hess.as_mut() {
                    let l_ll = -yf / (lambda * lambda) + (psi + yf) / (pl * pl);
                    let l_lpsi = -1.0 / pl + (psi + yf) / (pl * pl);
                    let l_pp = trigamma_diff(y, psi) + 1.0 / psi - 2.0 / pl + (psi + yf) / (pl * pl);
                    let l_lu = psi * l_lpsi;
                    let l_uu = psi * psi * l_pp + l_u;
                    for (a, da) in &dlam {
                        for (b, db) in &dlam {
                            h[(*a, *b)] += l_ll * da * db;
                        }
                        h[(*a, u)] += l_lu * da;
                        h[(u, *a)] += l_lu * da;
                    }
                    // second derivative of lambda within each piece
                    for p in &pieces {
                        for (a, xa) in &p.pred.coef {
                            for (b, xb) in &p.pred.coef {
                                h[(*a, *b)] += l_lam * p.value * xa * xb;
                            }
                        }
                    }
                    h[(u, u)] += l_uu;
                }
            }
        }
        if !value.is_finite() || grad.iter().any(|v| !v.is_finite()) {
            return Err(FitError::Overflow);
        }
        Ok((value, grad, hess))
    }
}

/// Conditional means `lambda[t - Q][g]` for `t >= Q`.
pub fn conditional_means(
    theta: &[f64],
    p: f64,
    design: &Design,
    data: &SurveillanceSeries,
) -> Result<Vec<Vec<f64>>, FitError> {
    check_theta(theta, design)?;
    Model::new(design, data, p)?.means(theta)
}

/// Negative binomial log-likelihood over `t >= Q`.
pub fn log_likelihood(theta: &[f64], p: f64, design: &Design, data: &SurveillanceSeries) -> Result<f64, FitError> {
    check_theta(theta, design)?;
    Model::new(design, data, p)?.loglik(theta)
}

/// Analytic gradient of [`log_likelihood`] with respect to `theta`.
pub fn log_likelihood_gradient(
    theta: &[f64],
    p: f64,
    design: &Design,
    data: &SurveillanceSeries,
) -> Result<Vec<f64>, FitError> {
    check_theta(theta, design)?;
    Ok(Model::new(design, data, p)?.derivatives(theta, false)?.1)
}

/// Observed information `-d^2 l / d theta^2`.
pub fn observed_information(
    theta: &[f64],
    p: f64,
    design: &Design,
    data: &SurveillanceSeries,
) -> Result<DMatrix<f64>, FitError> {
    check_theta(theta, design)?;
    let h = Model::new(design, data, p)?.derivatives(theta, true)?.2.expect("requested");
    Ok(-h)
}

fn check_theta(theta: &[f64], design: &Design) -> Result<(), FitError> {
    if theta.len() != design.n_params() {
        return Err(FitError::Config(format!(
            "theta has {} entries, the design {}",
            theta.len(),
            design.n_params()
        )));
    }
    Ok(())
}
