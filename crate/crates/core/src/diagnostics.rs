//! Pearson residuals, correlograms, moment-matched negative binomial
//! approximations and decomposition of stationary means.

use serde::{Deserialize, Serialize};

use crate::error::{DiagnosticsError, MomentsError};
use crate::hhh4::{HhhFit, SurveillanceSeries};
use crate::model::MparSpec;
use crate::moments::{check_stationarity, PeriodicMoments};

/// 97.5% standard normal quantile as used for correlogram bounds.
pub const BOUND_Z: f64 = 1.96;

/// `(y - lambda) / sqrt(lambda + lambda^2 / psi)`.
pub fn pearson_residual(y: f64, lambda: f64, psi: f64) -> Result<f64, DiagnosticsError> {
    if !(lambda > 0.0) {
        return Err(DiagnosticsError::NonPositiveMean(lambda));
    }
    Ok((y - lambda) / (lambda + lambda * lambda / psi).sqrt())
}

/// Residuals `[t - Q][g]` for `t >= Q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualSet {
    pub first_time: usize,
    /// Standardized by the fitted conditional mean and dispersion.
    pub conditional: Vec<Vec<f64>>,
    /// Standardized by the phase's stationary mean and standard deviation.
    pub unconditional: Vec<Vec<f64>>,
}

impl ResidualSet {
    pub fn conditional_column(&self, g: usize) -> Vec<f64> {
        self.conditional.iter().map(|r| r[g]).collect()
    }

    pub fn unconditional_column(&self, g: usize) -> Vec<f64> {
        self.unconditional.iter().map(|r| r[g]).collect()
    }
}

/// Conditional and unconditional Pearson residuals of a fit. `moments`
/// must hold the stationary moments of the fitted model.
pub fn pearson_residuals(
    fit: &HhhFit,
    data: &SurveillanceSeries,
    moments: &PeriodicMoments,
) -> Result<ResidualSet, DiagnosticsError> {
    let g_count = data.units();
    let first = data.len().checked_sub(fit.fitted.len()).ok_or_else(|| {
        DiagnosticsError::InvalidArgument("fit has more fitted values than observations".into())
    })?;
    if fit.psi.len() != g_count || fit.fitted.iter().any(|r| r.len() != g_count) {
        return Err(DiagnosticsError::InvalidArgument("fit and data have different units".into()));
    }
    if moments.period() != data.period || moments.units() != g_count {
        return Err(DiagnosticsError::InvalidArgument(format!(
            "moments for period {} and {} units, data has {} and {g_count}",
            moments.period(),
            moments.units(),
            data.period
        )));
    }
    let mut conditional = Vec::with_capacity(fit.fitted.len());
    let mut unconditional = Vec::with_capacity(fit.fitted.len());
    for (i, lam) in fit.fitted.iter().enumerate() {
        let t = first + i;
        let s = data.phase(t);
        let row_c = (0..g_count)
            .map(|g| pearson_residual(data.value(t, g), lam[g], fit.psi[g]))
            .collect::<Result<Vec<_>, _>>()?;
        let row_u = (0..g_count)
            .map(|g| {
                let sd = moments.sd(s, g);
                if sd > 0.0 {
                    Ok((data.value(t, g) - moments.mu[s][g]) / sd)
                } else {
                    Err(DiagnosticsError::ZeroVariance)
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        conditional.push(row_c);
        unconditional.push(row_u);
    }
    Ok(ResidualSet { first_time: first, conditional, unconditional })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlogram {
    /// `values[d] = corr(x_t, y_{t-d})` for `d = 0..=d_max`.
    pub values: Vec<f64>,
    pub bound: f64,
    pub n: usize,
}

impl Correlogram {
    pub fn d_max(&self) -> usize {
        self.values.len() - 1
    }

    /// Share of lags `from..=d_max` with `|r| <= bound`.
    pub fn fraction_within(&self, from: usize) -> f64 {
        let lags = &self.values[from.min(self.values.len())..];
        if lags.is_empty() {
            return 1.0;
        }
        lags.iter().filter(|r| r.abs() <= self.bound).count() as f64 / lags.len() as f64
    }
}

/// Sample auto- (`y = None`) or cross-correlations up to `d_max` with the
/// bound `1.96 / sqrt(n)`; `n` defaults to the series length.
///
/// Both series are centred at their overall means and the lag-`d` sum is
/// divided by the full length, so the lag-0 autocorrelation is exactly 1.
pub fn correlogram(
    x: &[f64],
    y: Option<&[f64]>,
    d_max: usize,
    n: Option<usize>,
) -> Result<Correlogram, DiagnosticsError> {
    let y = y.unwrap_or(x);
    if x.len() != y.len() {
        return Err(DiagnosticsError::InvalidArgument(format!("lengths {} and {}", x.len(), y.len())));
    }
    let len = x.len();
    if len <= d_max {
        return Err(DiagnosticsError::TooShort { len, d_max });
    }
    let centred = |v: &[f64]| -> Result<(Vec<f64>, f64), DiagnosticsError> {
        let m = v.iter().sum::<f64>() / len as f64;
        let c: Vec<f64> = v.iter().map(|a| a - m).collect();
        let ss = c.iter().map(|a| a * a).sum::<f64>();
        if !(ss > 0.0) {
            return Err(DiagnosticsError::ZeroVariance);
        }
        Ok((c, ss.sqrt()))
    };
    let (cx, nx) = centred(x)?;
    let (cy, ny) = centred(y)?;
    let values = (0..=d_max)
        .map(|d| (d..len).map(|t| cx[t] * cy[t - d]).sum::<f64>() / (nx * ny))
        .collect();
    let n = n.unwrap_or(len);
    Ok(Correlogram { values, bound: BOUND_Z / (n as f64).sqrt(), n })
}

/// Correlograms for every ordered pair `(i, j)` of residual columns:
/// `result[i][j].values[d] = corr(r_i,t, r_j,t-d)`.
pub fn residual_correlograms(rows: &[Vec<f64>], d_max: usize) -> Result<Vec<Vec<Correlogram>>, DiagnosticsError> {
    let g = rows.first().map_or(0, Vec::len);
    let cols: Vec<Vec<f64>> = (0..g).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
    cols.iter()
        .map(|ci| cols.iter().map(|cj| correlogram(ci, Some(cj), d_max, None)).collect())
        .collect()
}

/// Moment-matched negative binomial; `psi = None` means Poisson.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NegBinApprox {
    pub lambda: f64,
    pub psi: Option<f64>,
}

pub fn negbin_weekwise(mu: f64, sigma2: f64) -> Result<NegBinApprox, DiagnosticsError> {
    if !(mu > 0.0) {
        return Err(DiagnosticsError::NonPositiveMean(mu));
    }
    let excess = sigma2 - mu;
    if excess.abs() <= 1e-9 * mu {
        return Ok(NegBinApprox { lambda: mu, psi: None });
    }
    if excess < 0.0 {
        return Err(DiagnosticsError::Underdispersed { mu, sigma2 });
    }
    Ok(NegBinApprox { lambda: mu, psi: Some(mu * mu / excess) })
}

/// [`negbin_weekwise`] for every phase and unit, `[phase][unit]`.
pub fn weekwise_approximations(moments: &PeriodicMoments) -> Result<Vec<Vec<NegBinApprox>>, DiagnosticsError> {
    moments
        .mu
        .iter()
        .zip(&moments.sigma2)
        .map(|(m, v)| m.iter().zip(v).map(|(m, v)| negbin_weekwise(*m, *v)).collect())
        .collect()
}

/// Shares of each stationary mean `mu_gs` (indices `[phase][unit]`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanDecomposition {
    pub endemic: Vec<Vec<f64>>,
    /// `epidemic[s][g][source][q - 1]`: `phi_q,s[g][source] mu_source,s-q / mu_gs`.
    pub epidemic: Vec<Vec<Vec<Vec<f64>>>>,
    /// `lagged_mean[s][g][source][r - 1]`: `kappa_r,s[g][source] mu_source,s-r / mu_gs`
    /// (empty innermost vectors when there are no lagged means).
    pub lagged_mean: Vec<Vec<Vec<Vec<f64>>>>,
    /// `annual[g][source]`: contribution of the source's past incidence,
    /// summed over one cycle, divided by the cycle sum of `mu_g`.
    pub annual: Vec<Vec<f64>>,
    pub annual_endemic: Vec<f64>,
}

impl MeanDecomposition {
    /// Sum of all shares at one phase and unit (1 by construction).
    pub fn total(&self, s: usize, g: usize) -> f64 {
        self.endemic[s][g]
            + self.epidemic[s][g].iter().flatten().sum::<f64>()
            + self.lagged_mean[s][g].iter().flatten().sum::<f64>()
    }
}

/// Splits `mu_gs = nu_gs + sum phi mu + sum kappa mu` into its terms.
/// `moments` must be the stationary moments of `spec`.
pub fn decompose_means(spec: &MparSpec, moments: &PeriodicMoments) -> Result<MeanDecomposition, DiagnosticsError> {
    spec.check().map_err(MomentsError::from)?;
    let report = check_stationarity(spec)?;
    if !report.mean {
        return Err(MomentsError::NotMeanStationary { radius: report.spectral_radius_mean }.into());
    }
    let (g_count, l) = (spec.units, spec.period);
    if moments.period() != l || moments.units() != g_count {
        return Err(DiagnosticsError::InvalidArgument("moments do not match the spec's shape".into()));
    }
    let mu = &moments.mu;
    let back = |s: usize, k: usize| spec.phase(s as isize - k as isize);

    let mut endemic = vec![vec![0.0; g_count]; l];
    let mut epidemic = vec![vec![vec![vec![0.0; spec.obs_lags]; g_count]; g_count]; l];
    let mut lagged_mean = vec![vec![vec![vec![0.0; spec.mean_lags]; g_count]; g_count]; l];
    let mut annual = vec![vec![0.0; g_count]; g_count];
    let mut annual_endemic = vec![0.0; g_count];
    let cycle_mu: Vec<f64> = (0..g_count).map(|g| (0..l).map(|s| mu[s][g]).sum()).collect();

    for s in 0..l {
        for g in 0..g_count {
            let m = mu[s][g];
            if !(m > 0.0) {
                return Err(DiagnosticsError::NonPositiveMean(m));
            }
            endemic[s][g] = spec.nu[s][g] / m;
            annual_endemic[g] += spec.nu[s][g] / cycle_mu[g];
            for src in 0..g_count {
                for q in 0..spec.obs_lags {
                    let c = spec.phi[s][q][g][src] * mu[back(s, q + 1)][src];
                    epidemic[s][g][src][q] = c / m;
                    annual[g][src] += c / cycle_mu[g];
                }
                for r in 0..spec.mean_lags {
                    // E(lambda) = E(Y) at every phase
                    let c = spec.kappa[s][r][g][src] * mu[back(s, r + 1)][src];
                    lagged_mean[s][g][src][r] = c / m;
                    annual[g][src] += c / cycle_mu[g];
                }
            }
        }
    }
    let out = MeanDecomposition { endemic, epidemic, lagged_mean, annual, annual_endemic };
    for s in 0..l {
        for g in 0..g_count {
            let total = out.total(s, g);
            if (total - 1.0).abs() > 1e-6 {
                return Err(DiagnosticsError::InvalidArgument(format!(
                    "moments are not the stationary means of the spec (shares sum to {total} at phase {s}, unit {g})"
                )));
            }
        }
    }
    Ok(out)
}
