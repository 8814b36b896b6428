use crate::error::MomentsError;
use crate::model::{MparSpec, ResponseFamily};

/// Rewrites an MPAR(G, Q, R) spec with `R > 0` as an MPAR(2G, max(Q, R), 0)
/// spec on `Z_t = (Y_t, lambda_t)`.
///
/// The second block of units has point-mass responses: its "observation"
/// is the conditional mean itself, so its variance coefficients are all
/// zero. Missing lag orders are padded with zero matrices.
pub fn augment_model(spec: &MparSpec) -> Result<MparSpec, MomentsError> {
    spec.check()?;
    if spec.mean_lags == 0 {
        return Err(MomentsError::Precondition(
            "R > 0 (augmentation of an R = 0 model is a no-op)".into(),
        ));
    }
    let g = spec.units;
    let lags = spec.obs_lags.max(spec.mean_lags);
    let zero = vec![vec![0.0; g]; g];

    let mut phi = Vec::with_capacity(spec.period);
    let mut nu = Vec::with_capacity(spec.period);
    let mut psi = Vec::with_capacity(spec.period);
    for t in 0..spec.period {
        let mut per_lag = Vec::with_capacity(lags);
        for q in 0..lags {
            let p = spec.phi[t].get(q).unwrap_or(&zero);
            let k = spec.kappa[t].get(q).unwrap_or(&zero);
            let top: Vec<Vec<f64>> = (0..g)
                .map(|row| p[row].iter().chain(k[row].iter()).copied().collect())
                .collect();
            let mut block = top.clone();
            block.extend(top);
            per_lag.push(block);
        }
        phi.push(per_lag);
        nu.push(spec.nu[t].iter().chain(spec.nu[t].iter()).copied().collect());
        psi.push(
            spec.psi[t]
                .iter()
                .copied()
                .chain(std::iter::repeat_n(None, g))
                .collect(),
        );
    }
    let mut family = spec.family.clone();
    family.extend(std::iter::repeat_n(ResponseFamily::Degenerate, g));

    Ok(MparSpec {
        units: 2 * g,
        obs_lags: lags,
        mean_lags: 0,
        period: spec.period,
        nu,
        phi,
        kappa: vec![Vec::new(); spec.period],
        family,
        psi,
    })
}

/// Pads a `Q = 0` spec to one lag of zeros so the stacked vector is non-empty.
pub(crate) fn pad_observation_lags(spec: &MparSpec) -> MparSpec {
    let mut out = spec.clone();
    if out.obs_lags == 0 {
        out.obs_lags = 1;
        for t in 0..out.period {
            out.phi[t] = vec![vec![vec![0.0; out.units]; out.units]];
        }
    }
    out
}

/// Brings any valid spec into the `R = 0`, `Q >= 1` form the engine runs on.
pub(crate) fn engine_form(spec: &MparSpec) -> Result<MparSpec, MomentsError> {
    spec.check()?;
    let base = if spec.mean_lags > 0 { augment_model(spec)? } else { spec.clone() };
    Ok(pad_observation_lags(&base))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::VarianceCoefficients;

    #[test]
    fn par11_augmentation() {
        let spec = MparSpec::par11(&[1.0], &[0.3], &[0.4], ResponseFamily::NegBin, Some(5.0));
        let z = augment_model(&spec).unwrap();
        assert_eq!((z.units, z.obs_lags, z.mean_lags), (2, 1, 0));
        assert_eq!(z.phi[0][0], vec![vec![0.3, 0.4], vec![0.3, 0.4]]);
        assert_eq!(z.nu[0], vec![1.0, 1.0]);
        assert_eq!(z.family, vec![ResponseFamily::NegBin, ResponseFamily::Degenerate]);
        assert_eq!(z.variance_at(0).unwrap()[1], VarianceCoefficients::ZERO);
        assert!(z.validate().is_ok());
    }

    #[test]
    fn pads_to_common_lag_order() {
        let spec = MparSpec {
            units: 1,
            obs_lags: 1,
            mean_lags: 3,
            period: 2,
            nu: vec![vec![1.0]; 2],
            phi: vec![vec![vec![vec![0.2]]]; 2],
            kappa: vec![vec![vec![vec![0.1]], vec![vec![0.05]], vec![vec![0.02]]]; 2],
            family: vec![ResponseFamily::Poisson],
            psi: vec![vec![None]; 2],
        };
        let z = augment_model(&spec).unwrap();
        assert_eq!(z.obs_lags, 3);
        assert_eq!(z.phi[1][0], vec![vec![0.2, 0.1], vec![0.2, 0.1]]);
        assert_eq!(z.phi[1][2], vec![vec![0.0, 0.02], vec![0.0, 0.02]]);
    }

    #[test]
    fn rejects_r_zero() {
        let spec = MparSpec::par10(&[1.0], &[0.5], ResponseFamily::Poisson, None);
        assert!(matches!(augment_model(&spec), Err(MomentsError::Precondition(_))));
    }
}
