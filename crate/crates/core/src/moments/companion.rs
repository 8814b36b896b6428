use nalgebra::DMatrix;

use crate::error::MomentsError;
use crate::model::MparSpec;

/// Companion matrix of dimension `1 + QG` for one phase.
///
/// Applied to `(1, Y_{t-Q}, ..., Y_{t-1})` it yields
/// `(1, Y_{t-Q+1}, ..., Y_{t-1}, lambda_t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CompanionMatrix {
    pub phase: usize,
    pub data: DMatrix<f64>,
    units: usize,
}

impl CompanionMatrix {
    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    /// The last `G` rows, mapping the stacked past to `lambda_t`.
    pub fn weights(&self) -> DMatrix<f64> {
        let n = self.dim();
        self.data.rows(n - self.units, self.units).into_owned()
    }
}

pub fn build_companion(spec: &MparSpec, t: usize) -> Result<CompanionMatrix, MomentsError> {
    if spec.mean_lags != 0 {
        return Err(MomentsError::Precondition(
            "R = 0; augment the model first".into(),
        ));
    }
    spec.check()?;
    if t >= spec.period {
        return Err(MomentsError::Precondition(format!("phase {t} < L = {}", spec.period)));
    }
    Ok(companion_unchecked(spec, t))
}

/// Block `k` (1-based) of the stacked vector starts at `1 + (k - 1) G`.
pub(crate) fn block_start(g: usize, k: usize) -> usize {
    1 + (k - 1) * g
}

pub(crate) fn companion_unchecked(spec: &MparSpec, t: usize) -> CompanionMatrix {
    let g = spec.units;
    let q = spec.obs_lags;
    let n = 1 + q * g;
    let mut data = DMatrix::zeros(n, n);
    data[(0, 0)] = 1.0;
    for i in 0..(q.saturating_sub(1) * g) {
        data[(1 + i, 1 + g + i)] = 1.0;
    }
    let last = block_start(g, q);
    for row in 0..g {
        data[(last + row, 0)] = spec.nu[t][row];
        for k in 1..=q {
            // block k holds Y_{t-1-Q+k}, i.e. lag Q - k + 1
            let lag = q - k + 1;
            let col0 = block_start(g, k);
            for col in 0..g {
                data[(last + row, col0 + col)] = spec.phi[t][lag - 1][row][col];
            }
        }
    }
    CompanionMatrix { phase: t, data, units: g }
}

/// Monodromy product `phi_t phi_{t-1} ... phi_{t-L+1}`.
pub(crate) fn cycle_product(companions: &[CompanionMatrix], t: usize) -> DMatrix<f64> {
    let l = companions.len();
    let mut prod = DMatrix::identity(companions[0].dim(), companions[0].dim());
    for i in 0..l {
        let s = (t + l - i) % l;
        prod *= &companions[s].data;
    }
    prod
}

pub(crate) fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    if m.nrows() == 1 {
        return m[(0, 0)].abs();
    }
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn stacked(past: &[f64]) -> DVector<f64> {
        let mut v = DVector::zeros(past.len() + 1);
        v[0] = 1.0;
        for (i, &x) in past.iter().enumerate() {
            v[i + 1] = x;
        }
        v
    }
    use crate::model::ResponseFamily;

    #[test]
    fn scalar_lag_one() {
        let spec = MparSpec::par10(&[1.0], &[0.5], ResponseFamily::Poisson, None);
        let c = build_companion(&spec, 0).unwrap();
        assert_eq!(c.data, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.5]));
    }

    #[test]
    fn scalar_lag_two() {
        let spec = MparSpec {
            units: 1,
            obs_lags: 2,
            mean_lags: 0,
            period: 1,
            nu: vec![vec![1.0]],
            phi: vec![vec![vec![vec![0.4]], vec![vec![0.1]]]],
            kappa: vec![Vec::new()],
            family: vec![ResponseFamily::Poisson],
            psi: vec![vec![None]],
        };
        let c = build_companion(&spec, 0).unwrap();
        let want = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.1, 0.4]);
        assert_eq!(c.data, want);
        assert_eq!(c.weights(), DMatrix::from_row_slice(1, 3, &[1.0, 0.1, 0.4]));
    }

    #[test]
    fn rejects_mean_lags() {
        let spec = MparSpec::par11(&[1.0], &[0.5], &[0.2], ResponseFamily::Poisson, None);
        assert!(matches!(build_companion(&spec, 0), Err(MomentsError::Precondition(_))));
    }

    #[test]
    fn identity_on_stacked_history() {
        // G = 2, Q = 3; check phi~ Y~ = (1, Y_{t-2}, Y_{t-1}, lambda_t)
        let (g, q) = (2, 3);
        let mats = [
            vec![vec![0.1, 0.2], vec![0.3, 0.4]],
            vec![vec![0.05, 0.0], vec![0.01, 0.02]],
            vec![vec![0.03, 0.07], vec![0.0, 0.09]],
        ];
        let spec = MparSpec {
            units: g,
            obs_lags: q,
            mean_lags: 0,
            period: 1,
            nu: vec![vec![1.5, 2.5]],
            phi: vec![mats.to_vec()],
            kappa: vec![Vec::new()],
            family: vec![ResponseFamily::Poisson; 2],
            psi: vec![vec![None, None]],
        };
        let c = build_companion(&spec, 0).unwrap();
        assert_eq!(c.data.row(0).iter().filter(|&&x| x != 0.0).count(), 1);
        // history Y_{t-3}, Y_{t-2}, Y_{t-1}
        let hist = [[3.0, 7.0], [2.0, 11.0], [5.0, 13.0]];
        let flat: Vec<f64> = hist.iter().flatten().copied().collect();
        let out = &c.data * stacked(&flat);
        let mut lambda = [1.5, 2.5];
        for (row, l) in lambda.iter_mut().enumerate() {
            for lag in 1..=q {
                let y = hist[q - lag];
                *l += mats[lag - 1][row][0] * y[0] + mats[lag - 1][row][1] * y[1];
            }
        }
        let want = [1.0, 2.0, 11.0, 5.0, 13.0, lambda[0], lambda[1]];
        for (a, b) in out.iter().zip(want) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }
}
