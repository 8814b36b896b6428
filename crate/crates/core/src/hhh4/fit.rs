use log::{debug, warn};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::design::{build_predictors, lag_weights, Component, Design, HhhConfig, Predictor, Term};
use super::likelihood::Model;
use super::optim::{maximize, OptimOptions, Optimum};
use super::SurveillanceSeries;
use crate::error::FitError;
use crate::model::{MparSpec, ResponseFamily};

/// Standard normal 97.5% quantile.
const Z975: f64 = 1.959963984540054;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Points of the coarse profile grid over `[p_lower, p_upper]`.
    pub p_grid: usize,
    pub p_lower: f64,
    pub p_upper: f64,
    /// Width at which the golden-section refinement stops.
    pub p_tol: f64,
    /// Fixes `p` instead of profiling it.
    pub fixed_p: Option<f64>,
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            p_grid: 20,
            p_lower: 0.01,
            p_upper: 0.999,
            p_tol: 1e-4,
            fixed_p: None,
            grad_tol: 1e-6,
            max_iter: 500,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub p: f64,
    pub loglik: f64,
}

/// Maximum-likelihood fit. Standard errors and the covariance are
/// conditional on `p_hat`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HhhFit {
    pub names: Vec<String>,
    pub theta: Vec<f64>,
    pub se: Vec<f64>,
    /// Inverse observed information at the optimum.
    pub covariance: Vec<Vec<f64>>,
    pub p_hat: f64,
    /// Whether `p` was profiled (and counts as a parameter in the AIC).
    pub p_estimated: bool,
    pub lag_weights: Vec<f64>,
    pub psi: Vec<f64>,
    pub loglik: f64,
    pub aic: f64,
    pub converged: bool,
    pub gradient_norm: f64,
    pub iterations: usize,
    /// Conditional means `fitted[t - Q][g]` for `t >= Q`.
    pub fitted: Vec<Vec<f64>>,
    pub profile: Vec<ProfilePoint>,
}

impl HhhFit {
    pub fn n_params(&self) -> usize {
        self.theta.len() + usize::from(self.p_estimated)
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let n = self.theta.len();
        DMatrix::from_fn(n, n, |i, j| self.covariance[i][j])
    }
}

fn set_intercepts(preds: Option<&Vec<Vec<Predictor>>>, terms: &[Term], g: usize, value: f64, theta: &mut [f64]) {
    let Some(preds) = preds else { return };
    let coef_terms = terms.iter().filter(|t| t.has_coefficient());
    for (t, (j, _)) in coef_terms.zip(&preds[0][g].coef) {
        if *t == Term::Intercept {
            theta[*j] = value;
        }
    }
}

/// Endemic intercepts at the log mean count (net of the offset), epidemic
/// rates at 0.1, `psi = 10`, every other coefficient 0.
fn initial_values(design: &Design, config: &HhhConfig, data: &SurveillanceSeries) -> Vec<f64> {
    let mut theta = vec![0.0; design.n_params()];
    let mean_log_pop = data.populations.iter().map(|e| e.ln()).sum::<f64>() / data.units() as f64;
    let cross_shift = if config.epidemic_cross.contains(&Term::Offset) { mean_log_pop } else { 0.0 };
    for g in 0..data.units() {
        let mean = (0..data.len()).map(|t| data.value(t, g)).sum::<f64>() / data.len() as f64;
        let offset = if config.endemic.contains(&Term::Offset) { data.populations[g].ln() } else { 0.0 };
        set_intercepts(Some(&design.endemic), &config.endemic, g, mean.ln() - offset, &mut theta);
        set_intercepts(design.own.as_ref(), &config.epidemic_own, g, 0.1f64.ln(), &mut theta);
        set_intercepts(design.cross.as_ref(), &config.epidemic_cross, g, 0.1f64.ln() - cross_shift, &mut theta);
    }
    for &u in &design.psi_index {
        theta[u] = 10f64.ln();
    }
    theta
}

struct Inner {
    p: f64,
    opt: Optimum,
}

fn fit_at(design: &Design, data: &SurveillanceSeries, p: f64, start: &[f64], opts: &OptimOptions) -> Result<Inner, FitError> {
    let model = Model::new(design, data, p)?;
    let opt = maximize(|x, h| model.derivatives(x, h), start, opts)?;
    Ok(Inner { p, opt })
}

/// Maximum-likelihood fit of the endemic-epidemic model.
///
/// `p` is profiled on a coarse grid (evaluated in parallel) and refined by
/// golden-section search. It is not estimated when `Q = 1`, when there is
/// no epidemic component, or when `fixed_p` is given; `p_hat` is then 1
/// or the fixed value and the AIC does not count it.
pub fn fit(data: &SurveillanceSeries, config: &HhhConfig, options: &FitOptions) -> Result<HhhFit, FitError> {
    let design = build_predictors(config, data)?;
    let q = config.lags;
    if data.len() <= q + design.n_params() {
        return Err(FitError::Data(format!(
            "{} time points cannot support Q = {q} and {} parameters",
            data.len(),
            design.n_params()
        )));
    }
    for g in 0..data.units() {
        if data.counts.iter().all(|row| row[g] == 0) {
            return Err(FitError::Data(format!("unit {} has only zero counts", data.unit_names[g])));
        }
    }
    let inner_opts = OptimOptions { grad_tol: options.grad_tol, max_iter: options.max_iter, ..Default::default() };
    let theta0 = initial_values(&design, config, data);
    let p_matters = q > 1 && (design.own.is_some() || design.cross.is_some());

    let (best, profile, p_estimated) = match options.fixed_p {
        Some(p) => {
            lag_weights(p, q)?;
            (fit_at(&design, data, p, &theta0, &inner_opts)?, Vec::new(), false)
        }
        None if !p_matters => (fit_at(&design, data, 1.0, &theta0, &inner_opts)?, Vec::new(), false),
        None => {
            let (best, profile) = profile_p(&design, data, &theta0, options, &inner_opts)?;
            (best, profile, true)
        }
    };

    let Inner { p, opt } = best;
    let n = opt.x.len();
    let info = -&opt.hessian;
    let (covariance, psd) = match info.clone().cholesky() {
        Some(ch) => (ch.inverse(), true),
        None => match info.try_inverse() {
            Some(inv) => (inv, false),
            None => (DMatrix::from_element(n, n, f64::NAN), false),
        },
    };
    let covariance = (&covariance + covariance.transpose()) * 0.5;
    let gradient_norm = opt.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let converged = opt.converged && psd;
    if !converged {
        warn!("fit did not converge: gradient norm {gradient_norm:.3e}, information positive definite: {psd}");
    }
    let model = Model::new(&design, data, p)?;
    let fitted = model.means(&opt.x)?;
    let n_params = n + usize::from(p_estimated);
    Ok(HhhFit {
        names: design.names.clone(),
        se: (0..n).map(|i| covariance[(i, i)].max(0.0).sqrt()).collect(),
        covariance: (0..n).map(|i| covariance.row(i).iter().copied().collect()).collect(),
        p_hat: p,
        p_estimated,
        lag_weights: lag_weights(p, q)?,
        psi: design.psi_index.iter().map(|&u| opt.x[u].exp()).collect(),
        loglik: opt.value,
        aic: -2.0 * opt.value + 2.0 * n_params as f64,
        converged,
        gradient_norm,
        iterations: opt.iterations,
        fitted,
        profile,
        theta: opt.x,
    })
}

fn profile_p(
    design: &Design,
    data: &SurveillanceSeries,
    theta0: &[f64],
    options: &FitOptions,
    inner: &OptimOptions,
) -> Result<(Inner, Vec<ProfilePoint>), FitError> {
    let (lo, hi) = (options.p_lower, options.p_upper);
    if !(0.0 < lo && lo < hi && hi <= 1.0) || options.p_grid < 2 {
        return Err(FitError::Config(format!("profile range ({lo}, {hi}) with {} points", options.p_grid)));
    }
    let step = (hi - lo) / (options.p_grid - 1) as f64;
    let grid: Vec<f64> = (0..options.p_grid).map(|i| lo + step * i as f64).collect();
    let results: Vec<Option<Inner>> = grid
        .par_iter()
        .map(|&p| fit_at(design, data, p, theta0, inner).ok())
        .collect();
    let mut profile: Vec<ProfilePoint> = grid
        .iter()
        .zip(&results)
        .map(|(&p, r)| ProfilePoint { p, loglik: r.as_ref().map_or(f64::NEG_INFINITY, |r| r.opt.value) })
        .collect();
    let best_i = (0..grid.len())
        .max_by(|&a, &b| profile[a].loglik.total_cmp(&profile[b].loglik))
        .expect("non-empty grid");
    let mut best = results
        .into_iter()
        .nth(best_i)
        .flatten()
        .ok_or_else(|| FitError::NotConverged("likelihood not finite anywhere on the p grid".into()))?;

    // golden-section search on the bracket around the best grid point
    let mut a = grid[best_i.saturating_sub(1)];
    let mut b = grid[(best_i + 1).min(grid.len() - 1)];
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let eval = |p: f64, best: &mut Inner, profile: &mut Vec<ProfilePoint>| -> f64 {
        match fit_at(design, data, p, &best.opt.x, inner) {
            Ok(r) => {
                let v = r.opt.value;
                profile.push(ProfilePoint { p, loglik: v });
                if v > best.opt.value {
                    *best = r;
                }
                v
            }
            Err(_) => f64::NEG_INFINITY,
        }
    };
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let mut fc = eval(c, &mut best, &mut profile);
    let mut fd = eval(d, &mut best, &mut profile);
    while b - a > options.p_tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = eval(c, &mut best, &mut profile);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = eval(d, &mut best, &mut profile);
        }
    }
    profile.sort_by(|x, y| x.p.total_cmp(&y.p));
    debug!("profile maximum at p = {:.4}, loglik {:.4}", best.p, best.opt.value);
    Ok((best, profile))
}

/// Point estimate with a 95% interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Per-phase parameter curves `[phase][unit]` on the original scale:
/// `nu_gs`, `phi_ggs` and `phi_g'gs` (`g' != g`, receiving unit `g`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterCurves {
    pub endemic: Vec<Vec<CurvePoint>>,
    pub own: Option<Vec<Vec<CurvePoint>>>,
    pub cross: Option<Vec<Vec<CurvePoint>>>,
}

/// Evaluates every log-linear predictor over one cycle with delta-method
/// intervals `exp(eta +- 1.96 sqrt(x' Sigma x))`.
pub fn parameter_curves(
    fit: &HhhFit,
    config: &HhhConfig,
    data: &SurveillanceSeries,
) -> Result<ParameterCurves, FitError> {
    if !fit.converged {
        return Err(FitError::NotConverged("parameter curves need a converged fit".into()));
    }
    let design = design_for(fit, config, data)?;
    let cov = &fit.covariance;
    let curve = |preds: &Vec<Vec<Predictor>>| -> Result<Vec<Vec<CurvePoint>>, FitError> {
        preds
            .iter()
            .map(|row| {
                row.iter()
                    .map(|pred| {
                        let eta = pred.eta(&fit.theta);
                        let mut var = 0.0;
                        let mut scale = 0.0;
                        for (a, xa) in &pred.coef {
                            for (b, xb) in &pred.coef {
                                var += xa * xb * cov[*a][*b];
                                scale += (xa * xb * cov[*a][*b]).abs();
                            }
                        }
                        if var.is_nan() || var < -1e-10 * scale.max(1e-300) {
                            return Err(FitError::NotPsd);
                        }
                        let sd = var.max(0.0).sqrt();
                        Ok(CurvePoint {
                            estimate: eta.exp(),
                            lower: (eta - Z975 * sd).exp(),
                            upper: (eta + Z975 * sd).exp(),
                        })
                    })
                    .collect()
            })
            .collect()
    };
    Ok(ParameterCurves {
        endemic: curve(&design.endemic)?,
        own: design.component(Component::Own).map(curve).transpose()?,
        cross: design.component(Component::Cross).map(curve).transpose()?,
    })
}

fn design_for(fit: &HhhFit, config: &HhhConfig, data: &SurveillanceSeries) -> Result<Design, FitError> {
    let design = build_predictors(config, data)?;
    if design.names != fit.names {
        return Err(FitError::Config("fit does not match the configuration".into()));
    }
    Ok(design)
}

/// The fitted model as an MPAR(G, Q, 0) spec: `phi[s][q][g][g'] =
/// phi_g'gs * w_q`, `nu[s][g] = nu_gs`, negative binomial with the fitted
/// `psi_g` at every phase.
pub fn to_mpar(fit: &HhhFit, config: &HhhConfig, data: &SurveillanceSeries) -> Result<MparSpec, FitError> {
    let design = design_for(fit, config, data)?;
    let (g_count, l, q) = (design.units, design.period, design.lags);
    let w = lag_weights(fit.p_hat, q)?;
    let th = &fit.theta;
    let mut nu = vec![vec![0.0; g_count]; l];
    let mut phi = vec![vec![vec![vec![0.0; g_count]; g_count]; q]; l];
    for s in 0..l {
        for g in 0..g_count {
            nu[s][g] = design.endemic[s][g].eta(th).exp();
            let own = design.own.as_ref().map_or(0.0, |o| o[s][g].eta(th).exp());
            let cross = design.cross.as_ref().map_or(0.0, |c| c[s][g].eta(th).exp());
            for (lag, wq) in w.iter().enumerate() {
                for src in 0..g_count {
                    phi[s][lag][g][src] = wq * if src == g { own } else { cross };
                }
            }
        }
    }
    MparSpec {
        units: g_count,
        obs_lags: q,
        mean_lags: 0,
        period: l,
        nu,
        phi,
        kappa: vec![Vec::new(); l],
        family: vec![ResponseFamily::NegBin; g_count],
        psi: vec![fit.psi.iter().map(|p| Some(*p)).collect(); l],
    }
    .validate()
    .map_err(|e| FitError::Config(format!("fitted model is not a valid spec: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::simulate;
    use approx::assert_relative_eq;

    fn true_spec_data(seed: u64) -> (SurveillanceSeries, HhhConfig, Vec<f64>) {
        let config = HhhConfig { lags: 3, ..HhhConfig::default() };
        // build a design on dummy data to map theta to a spec
        let dummy = SurveillanceSeries::new(vec![vec![1, 1]; 10], vec!["a".into(), "b".into()], vec![1e5, 4e5], 0, 52).unwrap();
        let design = build_predictors(&config, &dummy).unwrap();
        let theta = vec![
            -9.5, 0.5, 0.3, -10.0, 0.4, 0.2, // endemic
            -0.7, -0.5, 0.3, 0.1, -0.9, -0.3, 0.2, -0.1, // own
            -13.0, 0.2, 0.1, // cross
            10f64.ln(), 20f64.ln(),
        ];
        assert_eq!(theta.len(), design.n_params());
        let fake = HhhFit {
            names: design.names.clone(),
            theta: theta.clone(),
            se: vec![0.0; theta.len()],
            covariance: vec![vec![0.0; theta.len()]; theta.len()],
            p_hat: 0.6,
            p_estimated: true,
            lag_weights: lag_weights(0.6, 3).unwrap(),
            psi: vec![10.0, 20.0],
            loglik: 0.0,
            aic: 0.0,
            converged: true,
            gradient_norm: 0.0,
            iterations: 0,
            fitted: Vec::new(),
            profile: Vec::new(),
        };
        let spec = to_mpar(&fake, &config, &dummy).unwrap();
        let sim = simulate(&spec, 52 * 6, None, seed, None).unwrap();
        let data = SurveillanceSeries::from_simulation(&sim, vec!["a".into(), "b".into()], vec![1e5, 4e5]).unwrap();
        (data, config, theta)
    }

    #[test]
    fn recovers_parameters_and_is_deterministic() {
        let (data, config, theta) = true_spec_data(5);
        let fit1 = fit(&data, &config, &FitOptions::default()).unwrap();
        assert!(fit1.converged, "gradient {}", fit1.gradient_norm);
        assert!(fit1.gradient_norm < 1e-6);
        assert!((fit1.p_hat - 0.6).abs() < 0.3, "p = {}", fit1.p_hat);
        let z: Vec<f64> = theta.iter().zip(&fit1.theta).zip(&fit1.se).map(|((t, e), s)| (e - t) / s).collect();
        assert!(z.iter().all(|v| v.abs() < 4.5), "{z:?}");
        assert_relative_eq!(fit1.aic, -2.0 * fit1.loglik + 2.0 * 20.0, max_relative = 1e-14);
        let fit2 = fit(&data, &config, &FitOptions::default()).unwrap();
        assert_eq!(fit1, fit2);
        // covariance symmetric PSD
        let cov = fit1.covariance_matrix();
        assert_eq!(cov, cov.transpose());
        assert!(cov.symmetric_eigenvalues().iter().all(|e| *e >= 0.0));
        // profile contains the estimate and it is the maximum
        assert!(fit1.profile.iter().all(|pt| pt.loglik <= fit1.loglik + 1e-9));
    }

    #[test]
    fn curves_and_spec_are_consistent() {
        let (data, config, _) = true_spec_data(8);
        let f = fit(&data, &config, &FitOptions::default()).unwrap();
        let curves = parameter_curves(&f, &config, &data).unwrap();
        let spec = to_mpar(&f, &config, &data).unwrap();
        for s in 0..52 {
            for g in 0..2 {
                let c = curves.endemic[s][g];
                assert_relative_eq!(c.estimate, spec.nu[s][g], max_relative = 1e-14);
                assert!(c.lower <= c.estimate && c.estimate <= c.upper);
                let own = curves.own.as_ref().unwrap()[s][g].estimate;
                let cross = curves.cross.as_ref().unwrap()[s][g].estimate;
                let total_own: f64 = (0..3).map(|q| spec.phi[s][q][g][g]).sum();
                let total_cross: f64 = (0..3).map(|q| spec.phi[s][q][g][1 - g]).sum();
                assert_relative_eq!(total_own, own, max_relative = 1e-12);
                assert_relative_eq!(total_cross, cross, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn zero_covariance_gives_zero_width() {
        let (data, config, _) = true_spec_data(9);
        let mut f = fit(&data, &config, &FitOptions::default()).unwrap();
        let n = f.theta.len();
        f.covariance = vec![vec![0.0; n]; n];
        let curves = parameter_curves(&f, &config, &data).unwrap();
        for c in curves.endemic.iter().flatten() {
            assert_eq!(c.lower, c.estimate);
            assert_eq!(c.upper, c.estimate);
        }
        f.covariance[0][0] = -1.0;
        assert_eq!(parameter_curves(&f, &config, &data), Err(FitError::NotPsd));
    }

    #[test]
    fn intercept_only_curve_is_flat() {
        let (data, _, _) = true_spec_data(10);
        let config = HhhConfig {
            lags: 1,
            endemic: vec![Term::Offset, Term::Intercept],
            epidemic_own: vec![Term::Intercept],
            epidemic_cross: vec![],
            ..HhhConfig::default()
        };
        let f = fit(&data, &config, &FitOptions::default()).unwrap();
        assert!(!f.p_estimated);
        assert_eq!(f.p_hat, 1.0);
        assert_relative_eq!(f.aic, -2.0 * f.loglik + 2.0 * f.theta.len() as f64);
        let curves = parameter_curves(&f, &config, &data).unwrap();
        for s in 1..52 {
            assert_eq!(curves.endemic[s][0], curves.endemic[0][0]);
        }
        let spec = to_mpar(&f, &config, &data).unwrap();
        assert_eq!(spec.obs_lags, 1);
    }

    #[test]
    fn lag_one_fit_maps_to_first_lag_only() {
        let (data, config, _) = true_spec_data(11);
        let opts = FitOptions { fixed_p: Some(1.0), ..FitOptions::default() };
        let f = fit(&data, &config, &opts).unwrap();
        let spec = to_mpar(&f, &config, &data).unwrap();
        for s in 0..52 {
            assert!(spec.phi[s][0].iter().flatten().all(|v| *v > 0.0));
            for q in 1..3 {
                assert!(spec.phi[s][q].iter().flatten().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn placement_matches_conditional_means() {
        let (data, config, _) = true_spec_data(12);
        let f = fit(&data, &config, &FitOptions::default()).unwrap();
        let spec = to_mpar(&f, &config, &data).unwrap();
        for t in 3..data.len() {
            let s = data.phase(t);
            for g in 0..2 {
                let mut lam = spec.nu[s][g];
                for q in 0..3 {
                    for src in 0..2 {
                        lam += spec.phi[s][q][g][src] * data.value(t - 1 - q, src);
                    }
                }
                assert_relative_eq!(lam, f.fitted[t - 3][g], max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_data_rejected() {
        let counts = vec![vec![0, 3]; 200];
        let data = SurveillanceSeries::new(counts, vec!["a".into(), "b".into()], vec![1.0, 1.0], 0, 52).unwrap();
        assert!(matches!(fit(&data, &HhhConfig::default(), &FitOptions::default()), Err(FitError::Data(_))));
        let short = SurveillanceSeries::new(vec![vec![1, 3]; 20], vec!["a".into(), "b".into()], vec![1.0, 1.0], 0, 52).unwrap();
        assert!(matches!(fit(&short, &HhhConfig::default(), &FitOptions::default()), Err(FitError::Data(_))));
    }
}
