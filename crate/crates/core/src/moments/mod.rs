//! Periodically stationary moments of MPAR(G, Q, R) processes.
//!
//! Everything runs on the stacked vector `Y~_t = (1, Y_{t-Q+1}, ..., Y_t)`
//! and its second-moment matrix `M~_t = E(Y~_t Y~_t^T)`. Models with
//! lagged conditional means (`R > 0`) are first rewritten on
//! `Z_t = (Y_t, lambda_t)` by [`augment_model`].

pub(crate) mod augment;
mod companion;
mod covariance;
mod linear;
pub(crate) mod recursion;
mod stationarity;

use log::debug;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use augment::augment_model;
pub use companion::{build_companion, CompanionMatrix};
pub use covariance::extend_covariances;
pub use linear::{linear_condition_numbers, linear_system_size, solve_linear_moments};
pub use recursion::{iterate_moments, moment_step, stationary_means, IterateOptions};
pub use stationarity::{check_stationarity, StationarityReport};

use crate::error::MomentsError;
use crate::model::MparSpec;

/// `M~_t` for one phase. Entry `(0, 0)` is 1 and row 0 holds the means.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedMoments {
    pub phase: usize,
    pub m: DMatrix<f64>,
}

/// Per-phase unconditional moments.
///
/// `gamma[t][d][i][j] = Cov(Y_{i,t}, Y_{j,t-d})` and `rho` holds the
/// matching correlations (0 where a variance vanishes). Phases are 0-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicMoments {
    pub mu: Vec<Vec<f64>>,
    pub sigma2: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<Vec<Vec<f64>>>>,
    pub rho: Vec<Vec<Vec<Vec<f64>>>>,
}

impl PeriodicMoments {
    pub fn period(&self) -> usize {
        self.mu.len()
    }

    pub fn units(&self) -> usize {
        self.mu.first().map_or(0, Vec::len)
    }

    pub fn d_max(&self) -> usize {
        self.gamma.first().map_or(0, |g| g.len().saturating_sub(1))
    }

    pub fn sd(&self, t: usize, g: usize) -> f64 {
        self.sigma2[t][g].sqrt()
    }

    /// Keeps the first `g` units.
    pub fn project(&self, g: usize) -> PeriodicMoments {
        let cut4 = |x: &Vec<Vec<Vec<Vec<f64>>>>| -> Vec<Vec<Vec<Vec<f64>>>> {
            x.iter()
                .map(|per_lag| {
                    per_lag
                        .iter()
                        .map(|m| m[..g].iter().map(|row| row[..g].to_vec()).collect())
                        .collect()
                })
                .collect()
        };
        PeriodicMoments {
            mu: self.mu.iter().map(|r| r[..g].to_vec()).collect(),
            sigma2: self.sigma2.iter().map(|r| r[..g].to_vec()).collect(),
            gamma: cut4(&self.gamma),
            rho: cut4(&self.rho),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MomentMethod {
    /// Linear solve when every `a = 0` and the system is small enough,
    /// fixed-point iteration otherwise.
    #[default]
    Auto,
    Iterate,
    Linear,
}

impl std::str::FromStr for MomentMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(MomentMethod::Auto),
            "iterate" => Ok(MomentMethod::Iterate),
            "linear" => Ok(MomentMethod::Linear),
            other => Err(format!("unknown method `{other}` (auto|iterate|linear)")),
        }
    }
}

/// Largest number of unknowns for which `Auto` picks the dense linear solve.
pub const AUTO_LINEAR_MAX_UNKNOWNS: usize = 2500;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SummaryOptions {
    pub d_max: usize,
    pub iterate: IterateOptions,
    pub method: MomentMethod,
}

impl Default for SummaryOptions {
    fn default() -> Self {
        SummaryOptions { d_max: 3, iterate: IterateOptions::default(), method: MomentMethod::Auto }
    }
}

/// The method `summarize_moments` would actually run for a spec.
pub fn resolve_method(spec: &MparSpec, method: MomentMethod) -> Result<MomentMethod, MomentsError> {
    let z = augment::engine_form(spec)?;
    Ok(match method {
        MomentMethod::Auto => {
            let linear = !z.has_quadratic_variance()?;
            if linear && linear_system_size(&z) <= AUTO_LINEAR_MAX_UNKNOWNS {
                MomentMethod::Linear
            } else {
                MomentMethod::Iterate
            }
        }
        m => m,
    })
}

/// Means, variances and auto/cross-covariances of the original `G` units.
pub fn summarize_moments(
    spec: &MparSpec,
    opts: &SummaryOptions,
) -> Result<PeriodicMoments, MomentsError> {
    let z = augment::engine_form(spec)?;
    let prep = recursion::Prepared::new(&z)?;
    let method = resolve_method(spec, opts.method)?;
    debug!("summarize_moments: method {method:?}, state dimension {}", prep.dim());
    let stacked = match method {
        MomentMethod::Linear => linear::solve_prepared(&prep)?.0,
        _ => recursion::iterate_prepared(&prep, &opts.iterate)?,
    };
    let full = covariance::extend_prepared(&prep, &stacked, opts.d_max)?;
    Ok(full.project(spec.units))
}

/// Moments of every unit of the engine form, including the lagged-mean
/// units added by augmentation.
pub fn summarize_engine_moments(
    spec: &MparSpec,
    opts: &SummaryOptions,
) -> Result<PeriodicMoments, MomentsError> {
    let z = augment::engine_form(spec)?;
    let prep = recursion::Prepared::new(&z)?;
    let stacked = match resolve_method(spec, opts.method)? {
        MomentMethod::Linear => linear::solve_prepared(&prep)?.0,
        _ => recursion::iterate_prepared(&prep, &opts.iterate)?,
    };
    covariance::extend_prepared(&prep, &stacked, opts.d_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ResponseFamily::{self, *};
    use crate::par11;
    use approx::assert_relative_eq;

    fn opts(method: MomentMethod, d_max: usize) -> SummaryOptions {
        SummaryOptions { d_max, method, ..Default::default() }
    }

    #[test]
    fn auto_dispatch() {
        let pois = MparSpec::par10(&[1.0], &[0.5], Poisson, None);
        let nb = MparSpec::par10(&[1.0], &[0.5], NegBin, Some(3.0));
        assert_eq!(resolve_method(&pois, MomentMethod::Auto).unwrap(), MomentMethod::Linear);
        assert_eq!(resolve_method(&nb, MomentMethod::Auto).unwrap(), MomentMethod::Iterate);
    }

    #[test]
    fn poisson_paths_agree() {
        let spec = MparSpec::par11(&[1.0, 2.0, 0.7, 3.0], &[0.4, 0.3, 0.2, 0.5], &[0.3, 0.2, 0.6, 0.1], Poisson, None);
        let a = summarize_moments(&spec, &opts(MomentMethod::Auto, 4)).unwrap();
        let b = summarize_moments(&spec, &opts(MomentMethod::Iterate, 4)).unwrap();
        for t in 0..4 {
            assert_relative_eq!(a.mu[t][0], b.mu[t][0], max_relative = 1e-8);
            assert_relative_eq!(a.sigma2[t][0], b.sigma2[t][0], max_relative = 1e-8);
            for d in 0..=4 {
                assert_relative_eq!(a.gamma[t][d][0][0], b.gamma[t][d][0][0], max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn lagged_means_project_to_original_units() {
        let spec = MparSpec::par11(&[1.0, 2.0], &[0.3, 0.2], &[0.4, 0.5], NegBin, Some(6.0));
        let pm = summarize_moments(&spec, &SummaryOptions::default()).unwrap();
        assert_eq!(pm.units(), 1);
        assert_eq!(pm.period(), 2);
        let closed = par11::par11_autocovariances(&spec, 3).unwrap();
        let var = par11::par11_variances(&spec).unwrap();
        for t in 0..2 {
            assert_relative_eq!(pm.mu[t][0], var.mu[t], max_relative = 1e-10);
            assert_relative_eq!(pm.sigma2[t][0], var.sigma2[t], max_relative = 1e-10);
            for d in 1..=3 {
                assert_relative_eq!(pm.gamma[t][d][0][0], closed.gamma[t][d], max_relative = 1e-9);
            }
        }
        // the augmented unit carries Var(lambda_t)
        let full = summarize_engine_moments(&spec, &SummaryOptions::default()).unwrap();
        for t in 0..2 {
            assert_relative_eq!(full.sigma2[t][1], var.var_lambda[t], max_relative = 1e-9);
        }
    }

    #[test]
    fn iid_reduces_to_family_moments() {
        let spec = MparSpec {
            units: 1,
            obs_lags: 0,
            mean_lags: 0,
            period: 2,
            nu: vec![vec![4.0], vec![9.0]],
            phi: vec![Vec::new(); 2],
            kappa: vec![Vec::new(); 2],
            family: vec![ResponseFamily::NegBin],
            psi: vec![vec![Some(2.0)]; 2],
        };
        let pm = summarize_moments(&spec, &SummaryOptions::default()).unwrap();
        assert_relative_eq!(pm.mu[1][0], 9.0, max_relative = 1e-14);
        assert_relative_eq!(pm.sigma2[1][0], 9.0 + 81.0 / 2.0, max_relative = 1e-12);
        assert!(pm.gamma[1][1][0][0].abs() < 1e-12);
    }

    #[test]
    fn errors_propagate() {
        let spec = MparSpec::par10(&[1.0], &[1.05], NegBin, Some(3.0));
        assert!(summarize_moments(&spec, &SummaryOptions::default()).is_err());
        let spec = MparSpec::par10(&[1.0], &[0.5], NegBin, Some(3.0));
        assert!(matches!(
            summarize_moments(&spec, &opts(MomentMethod::Linear, 2)),
            Err(MomentsError::Precondition(_))
        ));
    }
}
