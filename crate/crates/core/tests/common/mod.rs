//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use mpar::hhh4::{build_predictors, lag_weights, to_mpar, HhhConfig, HhhFit, SurveillanceSeries};
use mpar::model::ResponseFamily;
use mpar::MparSpec;
use rand::Rng;

pub const UNITS: [&str; 2] = ["north", "south"];
pub const POPULATIONS: [f64; 2] = [1.0e5, 2.0e5];

pub fn unit_names() -> Vec<String> {
    UNITS.iter().map(|s| s.to_string()).collect()
}

/// A bivariate weekly endemic-epidemic model with known coefficients.
pub struct Truth {
    pub config: HhhConfig,
    pub theta: Vec<f64>,
    pub p: f64,
    pub spec: MparSpec,
}

/// Coefficients follow the default layout: endemic (intercept, sin, cos)
/// per unit, own (intercept, indicator, sin, cos) per unit, shared cross
/// (intercept, sin, cos), then log psi per unit. `own_level` shifts both
/// own-lag intercepts.
pub fn truth(lags: usize, p: f64, own_level: f64) -> Truth {
    let config = HhhConfig { lags, ..HhhConfig::default() };
    let dummy = SurveillanceSeries::new(vec![vec![1, 1]; 10], unit_names(), POPULATIONS.to_vec(), 0, 52).unwrap();
    let design = build_predictors(&config, &dummy).unwrap();
    #[rustfmt::skip]
    let theta = vec![
        -9.6, 0.6, 0.3, -10.4, 0.5, 0.2,
        own_level, -0.5, 0.3, 0.1, own_level - 0.2, -0.3, 0.2, -0.1,
        -13.8, 0.2, 0.1,
        10f64.ln(), 25f64.ln(),
    ];
    assert_eq!(theta.len(), design.n_params());
    let n = theta.len();
    let fake = HhhFit {
        names: design.names.clone(),
        theta: theta.clone(),
        se: vec![0.0; n],
        covariance: vec![vec![0.0; n]; n],
        p_hat: p,
        p_estimated: true,
        lag_weights: lag_weights(p, lags).unwrap(),
        psi: vec![10.0, 25.0],
        loglik: 0.0,
        aic: 0.0,
        converged: true,
        gradient_norm: 0.0,
        iterations: 0,
        fitted: Vec::new(),
        profile: Vec::new(),
    };
    let spec = to_mpar(&fake, &config, &dummy).unwrap();
    Truth { config, theta, p, spec }
}

/// Random stationary MPAR spec with linear variance (`a = 0`).
pub fn random_linear_spec<R: Rng>(rng: &mut R, g: usize, q: usize, r: usize, l: usize) -> MparSpec {
    let families = [ResponseFamily::Poisson, ResponseFamily::Gaussian, ResponseFamily::Laplace, ResponseFamily::Uniform];
    let family: Vec<ResponseFamily> = (0..g).map(|_| families[rng.random_range(0..families.len())]).collect();
    random_spec(rng, family, q, r, l)
}

/// Random stationary spec for the given families; coefficients are
/// non-negative and scaled so that the per-phase row sums of
/// `sum_q phi + sum_r kappa` stay below 0.85.
pub fn random_spec<R: Rng>(rng: &mut R, family: Vec<ResponseFamily>, q: usize, r: usize, l: usize) -> MparSpec {
    let g = family.len();
    let nu: Vec<Vec<f64>> = (0..l).map(|_| (0..g).map(|_| rng.random_range(0.5..4.0)).collect()).collect();
    let mut phi = vec![vec![vec![vec![0.0; g]; g]; q]; l];
    let mut kappa = vec![vec![vec![vec![0.0; g]; g]; r]; l];
    for s in 0..l {
        for i in 0..g {
            let mut row: Vec<f64> = (0..(q + r) * g).map(|_| rng.random::<f64>()).collect();
            let target = rng.random_range(0.2..0.85);
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x *= target / total);
            for k in 0..q {
                for j in 0..g {
                    phi[s][k][i][j] = row[k * g + j];
                }
            }
            for k in 0..r {
                for j in 0..g {
                    kappa[s][k][i][j] = row[(q + k) * g + j];
                }
            }
        }
    }
    let psi = (0..l)
        .map(|_| {
            family
                .iter()
                .map(|f| f.requires_psi().then(|| rng.random_range(0.5..5.0)))
                .collect()
        })
        .collect();
    MparSpec { units: g, obs_lags: q, mean_lags: r, period: l, nu, phi, kappa, family, psi }
}
