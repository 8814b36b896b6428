use nalgebra::DMatrix;

use super::companion::block_start;
use super::recursion::Prepared;
use super::{PeriodicMoments, StackedMoments};
use crate::error::MomentsError;
use crate::model::MparSpec;

/// Converts stacked second moments into per-phase covariances and
/// correlations up to lag `d_max`.
///
/// Lags below `Q` are read from the blocks of `M~_t`; longer lags follow
/// `E(Y_t Y_{t-d}^T) = W_t E(Y~_{t-1} Y_{t-d}^T)` where `W_t` is the last
/// `G` rows of the companion matrix.
pub fn extend_covariances(
    spec: &MparSpec,
    moments: &[StackedMoments],
    d_max: usize,
) -> Result<PeriodicMoments, MomentsError> {
    let prep = Prepared::new(spec)?;
    extend_prepared(&prep, moments, d_max)
}

pub(crate) fn extend_prepared(
    prep: &Prepared,
    moments: &[StackedMoments],
    d_max: usize,
) -> Result<PeriodicMoments, MomentsError> {
    let l = prep.period();
    let g = prep.units();
    let q = prep.spec.obs_lags;
    let n = prep.dim();
    if moments.len() != l {
        return Err(MomentsError::Precondition(format!(
            "{l} phases of moments (got {})",
            moments.len()
        )));
    }
    for (t, sm) in moments.iter().enumerate() {
        if sm.phase != t || sm.m.nrows() != n || sm.m.ncols() != n {
            return Err(MomentsError::Precondition(format!(
                "moment matrix {t} of size {n}x{n} at phase {t}"
            )));
        }
    }

    let mu: Vec<Vec<f64>> = moments
        .iter()
        .map(|sm| (0..g).map(|i| sm.m[(0, prep.last_block() + i)]).collect())
        .collect();

    // raw[t][d] = E(Y_t Y_{t-d}^T)
    let mut raw: Vec<Vec<DMatrix<f64>>> = vec![Vec::with_capacity(d_max + 1); l];
    let cur = block_start(g, q);
    for d in 0..=d_max {
        for t in 0..l {
            let block = if d < q {
                let lagged = block_start(g, q - d);
                moments[t].m.view((cur, lagged), (g, g)).into_owned()
            } else {
                let lag_phase = (t + l * (d / l + 1) - d) % l;
                let mut stacked = DMatrix::zeros(n, g);
                for j in 0..g {
                    stacked[(0, j)] = mu[lag_phase][j];
                }
                for k in 1..=q {
                    // block k of Y~_{t-1} holds Y_{t-1-Q+k}, at lag d-1-Q+k from t-d
                    let back = 1 + q - k;
                    let phase = (t + l * (back / l + 1) - back) % l;
                    let e = d + k - 1 - q;
                    stacked
                        .view_mut((block_start(g, k), 0), (g, g))
                        .copy_from(&raw[phase][e]);
                }
                prep.companions[t].weights() * stacked
            };
            raw[t].push(block);
        }
    }

    let sigma2: Vec<Vec<f64>> = (0..l)
        .map(|t| (0..g).map(|i| raw[t][0][(i, i)] - mu[t][i] * mu[t][i]).collect())
        .collect();
    let mut gamma = vec![vec![vec![vec![0.0; g]; g]; d_max + 1]; l];
    let mut rho = gamma.clone();
    for t in 0..l {
        for d in 0..=d_max {
            let s = (t + l * (d / l + 1) - d) % l;
            for i in 0..g {
                for j in 0..g {
                    let cov = raw[t][d][(i, j)] - mu[t][i] * mu[s][j];
                    gamma[t][d][i][j] = cov;
                    let denom = (sigma2[t][i] * sigma2[s][j]).sqrt();
                    rho[t][d][i][j] = if denom > 0.0 { cov / denom } else { 0.0 };
                }
            }
        }
    }
    Ok(PeriodicMoments { mu, sigma2, gamma, rho })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ResponseFamily::*;
    use crate::moments::{iterate_moments, solve_linear_moments, IterateOptions};
    use crate::par11;
    use approx::assert_relative_eq;

    #[test]
    fn lag_zero_matches_stacked_moments() {
        let spec = MparSpec::par10(&[1.0, 2.0], &[0.5, 0.25], Poisson, None);
        let ms = solve_linear_moments(&spec).unwrap();
        let pm = extend_covariances(&spec, &ms, 0).unwrap();
        for t in 0..2 {
            let mu = ms[t].m[(0, 1)];
            assert_eq!(pm.gamma[t][0][0][0], ms[t].m[(1, 1)] - mu * mu);
            assert_eq!(pm.sigma2[t][0], pm.gamma[t][0][0][0]);
        }
    }

    #[test]
    fn univariate_correlations_multiply() {
        let spec = MparSpec::par10(&[1.0, 2.0, 0.5], &[0.5, 0.25, 0.8], NegBin, Some(5.0));
        let ms = iterate_moments(&spec, &IterateOptions::default()).unwrap();
        let pm = extend_covariances(&spec, &ms, 7).unwrap();
        let closed = par11::par11_autocovariances(&spec, 7).unwrap();
        for t in 0..3 {
            for d in 1..=7 {
                let prod: f64 = (0..d).map(|i| pm.rho[(t + 30 - i) % 3][1][0][0]).product();
                assert_relative_eq!(pm.rho[t][d][0][0], prod, max_relative = 1e-10);
                assert_relative_eq!(pm.gamma[t][d][0][0], closed.gamma[t][d], max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn decoupled_units_have_no_cross_correlation() {
        let spec = MparSpec {
            units: 2,
            obs_lags: 2,
            mean_lags: 0,
            period: 2,
            nu: vec![vec![1.0, 2.0], vec![0.5, 1.0]],
            phi: vec![
                vec![vec![vec![0.4, 0.0], vec![0.0, 0.3]], vec![vec![0.1, 0.0], vec![0.0, 0.1]]],
                vec![vec![vec![0.6, 0.0], vec![0.0, 0.5]], vec![vec![0.0, 0.0], vec![0.0, 0.2]]],
            ],
            kappa: vec![Vec::new(); 2],
            family: vec![NegBin, Poisson],
            psi: vec![vec![Some(3.0), None]; 2],
        };
        let ms = iterate_moments(&spec, &IterateOptions::default()).unwrap();
        let pm = extend_covariances(&spec, &ms, 5).unwrap();
        for t in 0..2 {
            for d in 0..=5 {
                assert!(pm.rho[t][d][0][1].abs() < 1e-9);
                assert!(pm.rho[t][d][1][0].abs() < 1e-9);
                assert!(pm.rho[t][d][0][0].abs() <= 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn within_block_lags_agree_with_recursion() {
        // Q = 3: lags 1 and 2 come from M~ blocks; check them against the
        // W_t recursion, which holds for every d >= 1.
        let spec = MparSpec {
            units: 1,
            obs_lags: 3,
            mean_lags: 0,
            period: 2,
            nu: vec![vec![1.0], vec![2.0]],
            phi: vec![
                vec![vec![vec![0.3]], vec![vec![0.2]], vec![vec![0.1]]],
                vec![vec![vec![0.5]], vec![vec![0.1]], vec![vec![0.05]]],
            ],
            kappa: vec![Vec::new(); 2],
            family: vec![NegBin],
            psi: vec![vec![Some(4.0)]; 2],
        };
        let ms = iterate_moments(&spec, &IterateOptions::default()).unwrap();
        let pm = extend_covariances(&spec, &ms, 6).unwrap();
        let phi = |t: usize, q: usize| spec.phi[t][q - 1][0][0];
        let cov = |t: usize, d: isize| -> f64 {
            if d >= 0 {
                pm.gamma[t][d as usize][0][0]
            } else {
                let s = (t as isize - d).rem_euclid(2) as usize;
                pm.gamma[s][(-d) as usize][0][0]
            }
        };
        for t in 0..2 {
            for d in 1..=6isize {
                let want: f64 = (1..=3)
                    .map(|q| phi(t, q) * cov((t + 2 - q % 2) % 2, d - q as isize))
                    .sum();
                assert_relative_eq!(cov(t, d), want, max_relative = 1e-9);
            }
        }
    }
}
