//! Closed-form periodically stationary moments of the univariate PAR(1, 1)
//! model `lambda_t = nu_t + phi_t Y_{t-1} + kappa_t lambda_{t-1}`.
//!
//! Phases are 0-based and `t - 1` wraps modulo `L`. Products over empty
//! index ranges are 1. The sums are evaluated directly in O(L^2).

use serde::{Deserialize, Serialize};

use crate::error::MomentsError;
use crate::model::{MparSpec, VarianceCoefficients};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Par11Stationarity {
    pub mean_stationary: bool,
    pub second_order_stationary: bool,
    /// `prod_m (phi_m + kappa_m)`
    pub mean_product: f64,
    /// `prod_m h_m` with `h_m = (phi_m + kappa_m)^2 + phi_m^2 a_{m-1}`
    pub h_product: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Par11Moments {
    pub mu: Vec<f64>,
    pub var_lambda: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub mean_product: f64,
    pub h_product: f64,
}

/// Lag-indexed autocovariances: `gamma[t][d] = Cov(Y_t, Y_{t-d})` for
/// `d = 0..=d_max`, with `gamma[t][0]` the variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Par11Autocovariances {
    pub gamma: Vec<Vec<f64>>,
    pub rho: Vec<Vec<f64>>,
}

/// Per-phase scalars extracted from a univariate spec.
struct Scalars {
    nu: Vec<f64>,
    phi: Vec<f64>,
    kappa: Vec<f64>,
    var: Vec<VarianceCoefficients>,
}

impl Scalars {
    fn from_spec(spec: &MparSpec) -> Result<Scalars, MomentsError> {
        spec.check()?;
        if spec.units != 1 || spec.obs_lags > 1 || spec.mean_lags > 1 {
            return Err(MomentsError::Precondition(format!(
                "a univariate PAR(1, 1) spec (got G={}, Q={}, R={})",
                spec.units, spec.obs_lags, spec.mean_lags
            )));
        }
        let l = spec.period;
        let pick = |arr: &Vec<Vec<Vec<Vec<f64>>>>, t: usize| -> f64 {
            arr[t].first().map_or(0.0, |m| m[0][0])
        };
        Ok(Scalars {
            nu: (0..l).map(|t| spec.nu[t][0]).collect(),
            phi: (0..l).map(|t| pick(&spec.phi, t)).collect(),
            kappa: (0..l).map(|t| pick(&spec.kappa, t)).collect(),
            var: (0..l)
                .map(|t| spec.variance_at(t).map(|v| v[0]))
                .collect::<Result<_, _>>()?,
        })
    }

    fn len(&self) -> usize {
        self.nu.len()
    }

    fn at(&self, t: isize) -> usize {
        t.rem_euclid(self.len() as isize) as usize
    }

    fn slope(&self, t: usize) -> f64 {
        self.phi[t] + self.kappa[t]
    }

    fn h(&self, m: usize) -> f64 {
        let prev = self.at(m as isize - 1);
        self.slope(m).powi(2) + self.phi[m].powi(2) * self.var[prev].a
    }

    fn mean_product(&self) -> f64 {
        (0..self.len()).map(|m| self.slope(m)).product()
    }

    fn h_product(&self) -> f64 {
        (0..self.len()).map(|m| self.h(m)).product()
    }

    fn means(&self) -> Vec<f64> {
        let l = self.len() as isize;
        let denom = 1.0 - self.mean_product();
        (0..l)
            .map(|t| {
                let mut total = 0.0;
                let mut prod = 1.0;
                for i in 0..l {
                    total += self.nu[self.at(t - i)] * prod;
                    prod *= self.slope(self.at(t - i));
                }
                total / denom
            })
            .collect()
    }
}

pub fn par11_stationarity(spec: &MparSpec) -> Result<Par11Stationarity, MomentsError> {
    let s = Scalars::from_spec(spec)?;
    let mean_product = s.mean_product();
    let h_product = s.h_product();
    Ok(Par11Stationarity {
        mean_stationary: mean_product < 1.0,
        second_order_stationary: mean_product < 1.0 && h_product < 1.0,
        mean_product,
        h_product,
    })
}

pub fn par11_means(spec: &MparSpec) -> Result<Vec<f64>, MomentsError> {
    let s = Scalars::from_spec(spec)?;
    let radius = s.mean_product();
    if !(radius < 1.0) {
        return Err(MomentsError::NotMeanStationary { radius });
    }
    Ok(s.means())
}

pub fn par11_variances(spec: &MparSpec) -> Result<Par11Moments, MomentsError> {
    let s = Scalars::from_spec(spec)?;
    let mean_product = s.mean_product();
    if !(mean_product < 1.0) {
        return Err(MomentsError::NotMeanStationary { radius: mean_product });
    }
    let h_product = s.h_product();
    if !(h_product < 1.0) {
        return Err(MomentsError::NotSecondOrderStationary { radius: h_product });
    }
    let mu = s.means();
    let l = s.len() as isize;
    let var_lambda: Vec<f64> = (0..l)
        .map(|t| {
            let mut total = 0.0;
            let mut prod = 1.0;
            for i in 0..l {
                let cur = s.at(t - i);
                let prev = s.at(t - i - 1);
                total += s.phi[cur].powi(2) * s.var[prev].eval(mu[prev]) * prod;
                prod *= s.h(cur);
            }
            total / (1.0 - h_product)
        })
        .collect();
    let sigma2 = (0..s.len())
        .map(|t| s.var[t].eval(mu[t]) + (s.var[t].a + 1.0) * var_lambda[t])
        .collect();
    Ok(Par11Moments { mu, var_lambda, sigma2, mean_product, h_product })
}

pub fn par11_autocovariances(
    spec: &MparSpec,
    d_max: usize,
) -> Result<Par11Autocovariances, MomentsError> {
    if d_max < 1 {
        return Err(MomentsError::Precondition("d_max >= 1".into()));
    }
    let s = Scalars::from_spec(spec)?;
    let m = par11_variances(spec)?;
    let l = s.len() as isize;
    let mut gamma = vec![vec![0.0; d_max + 1]; s.len()];
    let mut rho = vec![vec![0.0; d_max + 1]; s.len()];
    for t in 0..l {
        let tu = t as usize;
        gamma[tu][0] = m.sigma2[tu];
        rho[tu][0] = 1.0;
        for d in 1..=d_max as isize {
            let mut prod = 1.0;
            for i in 0..=(d - 2) {
                prod *= s.slope(s.at(t - i));
            }
            let lagged = s.at(t - d);
            let head = s.at(t - d + 1);
            let v_lag = s.var[lagged];
            let var_lambda_lag = (m.sigma2[lagged] - v_lag.eval(m.mu[lagged])) / (v_lag.a + 1.0);
            let g = prod * (s.phi[head] * m.sigma2[lagged] + s.kappa[head] * var_lambda_lag);
            gamma[tu][d as usize] = g;
            rho[tu][d as usize] = g / (m.sigma2[tu] * m.sigma2[lagged]).sqrt();
        }
    }
    Ok(Par11Autocovariances { gamma, rho })
}
