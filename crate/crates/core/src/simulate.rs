//! Seeded forward simulation of MPAR processes and phase-wise empirical
//! moments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use rayon::prelude::*;

use crate::error::SimulationError;
use crate::model::{MparSpec, ResponseFamily};
use crate::moments::PeriodicMoments;

/// Simulated path stored row-major: entry `(t, g)` at `t * units + g`.
/// The first stored step has phase 0.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedSeries {
    pub units: usize,
    pub period: usize,
    pub values: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub seed: u64,
    pub burn_in: usize,
}

impl SimulatedSeries {
    pub fn len(&self) -> usize {
        self.values.len() / self.units
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, t: usize, g: usize) -> f64 {
        self.values[t * self.units + g]
    }

    pub fn lambda(&self, t: usize, g: usize) -> f64 {
        self.lambdas[t * self.units + g]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.units..(t + 1) * self.units]
    }

    pub fn column(&self, g: usize) -> Vec<f64> {
        (0..self.len()).map(|t| self.value(t, g)).collect()
    }

    pub fn empirical_moments(&self, d_max: usize) -> Result<PeriodicMoments, SimulationError> {
        empirical_moments(&self.values, self.units, 0, self.period, d_max)
    }
}

/// History preceding the first simulated step, oldest first:
/// `values` holds `Y_{-Q}, ..., Y_{-1}` and `lambdas` holds
/// `lambda_{-R}, ..., lambda_{-1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialHistory {
    pub values: Vec<Vec<f64>>,
    pub lambdas: Vec<Vec<f64>>,
}

pub fn default_burn_in(spec: &MparSpec) -> usize {
    10 * spec.period
}

/// Simulates `length` steps after discarding `burn_in` steps.
///
/// `None` for `burn_in` means `10 L`. Without an explicit history the
/// process starts from its stationary means, or from `nu` when those do
/// not exist. Output is a deterministic function of `seed`.
pub fn simulate(
    spec: &MparSpec,
    length: usize,
    burn_in: Option<usize>,
    seed: u64,
    init: Option<&InitialHistory>,
) -> Result<SimulatedSeries, SimulationError> {
    let rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_with_rng(spec, length, burn_in, seed, init, rng)
}

/// Independent replicate paths on separate streams of one seed.
pub fn simulate_replicates(
    spec: &MparSpec,
    replicates: usize,
    length: usize,
    burn_in: Option<usize>,
    seed: u64,
) -> Result<Vec<SimulatedSeries>, SimulationError> {
    (0..replicates)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            simulate_with_rng(spec, length, burn_in, seed, None, rng)
        })
        .collect()
}

fn simulate_with_rng(
    spec: &MparSpec,
    length: usize,
    burn_in: Option<usize>,
    seed: u64,
    init: Option<&InitialHistory>,
    mut rng: ChaCha8Rng,
) -> Result<SimulatedSeries, SimulationError> {
    spec.check()?;
    if length == 0 {
        return Err(SimulationError::InvalidArgument("length must be at least 1".into()));
    }
    let g = spec.units;
    let (q, r, l) = (spec.obs_lags, spec.mean_lags, spec.period);
    let burn_in = burn_in.unwrap_or_else(|| default_burn_in(spec));
    let total = burn_in + length;
    let phase_of = |step: usize| (step as isize - burn_in as isize).rem_euclid(l as isize) as usize;

    // rolling history, most recent last
    let (mut y_hist, mut lam_hist) = match init {
        Some(h) => {
            if h.values.len() != q || h.lambdas.len() != r {
                return Err(SimulationError::InvalidArgument(format!(
                    "history needs {q} observation rows and {r} mean rows"
                )));
            }
            if h.values.iter().chain(&h.lambdas).any(|row| row.len() != g) {
                return Err(SimulationError::InvalidArgument(format!("history rows need {g} entries")));
            }
            (h.values.clone(), h.lambdas.clone())
        }
        None => {
            let start = |k: usize| phase_of(0) as isize - k as isize;
            let means = start_means(spec);
            let at = |k: usize| means[spec.phase(start(k))].clone();
            ((1..=q).rev().map(at).collect(), (1..=r).rev().map(at).collect())
        }
    };
    let psi: Vec<Vec<f64>> = spec
        .psi
        .iter()
        .map(|row| row.iter().map(|p| p.unwrap_or(0.0)).collect())
        .collect();

    let mut values = Vec::with_capacity(length * g);
    let mut lambdas = Vec::with_capacity(length * g);
    let mut lambda = vec![0.0; g];
    let mut draw = vec![0.0; g];
    for step in 0..total {
        let t = phase_of(step);
        for (unit, lam) in lambda.iter_mut().enumerate() {
            let mut acc = spec.nu[t][unit];
            for lag in 1..=q {
                let past = &y_hist[q - lag];
                let row = &spec.phi[t][lag - 1][unit];
                acc += row.iter().zip(past).map(|(a, b)| a * b).sum::<f64>();
            }
            for lag in 1..=r {
                let past = &lam_hist[r - lag];
                let row = &spec.kappa[t][lag - 1][unit];
                acc += row.iter().zip(past).map(|(a, b)| a * b).sum::<f64>();
            }
            *lam = acc;
        }
        for unit in 0..g {
            let family = spec.family[unit];
            draw[unit] = sample(family, lambda[unit], psi[t][unit], &mut rng).ok_or_else(|| {
                SimulationError::OutOfSupport {
                    lambda: lambda[unit],
                    unit,
                    step,
                    family: family.to_string(),
                }
            })?;
        }
        if q > 0 {
            y_hist.remove(0);
            y_hist.push(draw.clone());
        }
        if r > 0 {
            lam_hist.remove(0);
            lam_hist.push(lambda.clone());
        }
        if step >= burn_in {
            values.extend_from_slice(&draw);
            lambdas.extend_from_slice(&lambda);
        }
    }
    Ok(SimulatedSeries { units: g, period: l, values, lambdas, seed, burn_in })
}

fn start_means(spec: &MparSpec) -> Vec<Vec<f64>> {
    let g = spec.units;
    let fallback = || spec.nu.clone();
    let z = match crate::moments::augment::engine_form(spec) {
        Ok(z) => z,
        Err(_) => return fallback(),
    };
    let prep = match crate::moments::recursion::Prepared::new(&z) {
        Ok(p) => p,
        Err(_) => return fallback(),
    };
    match prep.means() {
        Ok(mu) => {
            let start = prep.last_block();
            mu.iter().map(|m| (0..g).map(|i| m[start + i]).collect()).collect()
        }
        Err(_) => fallback(),
    }
}

/// One draw with mean `lambda` and dispersion `psi`; `None` if `lambda`
/// is outside the family's support.
pub fn sample<R: Rng + ?Sized>(family: ResponseFamily, lambda: f64, psi: f64, rng: &mut R) -> Option<f64> {
    if !family.mean_in_support(lambda) {
        return None;
    }
    let y = match family {
        ResponseFamily::Poisson => poisson(lambda, rng),
        ResponseFamily::NegBin => {
            if lambda == 0.0 {
                0.0
            } else {
                let rate = Gamma::new(psi, lambda / psi).ok()?.sample(rng);
                poisson(rate, rng)
            }
        }
        ResponseFamily::Gamma => Gamma::new(psi, lambda / psi).ok()?.sample(rng),
        ResponseFamily::Gaussian => Normal::new(lambda, psi.sqrt()).ok()?.sample(rng),
        ResponseFamily::Laplace => {
            let u: f64 = rng.random::<f64>() - 0.5;
            lambda - psi * u.signum() * (1.0 - 2.0 * u.abs()).ln()
        }
        ResponseFamily::Uniform => lambda + psi * (2.0 * rng.random::<f64>() - 1.0),
        ResponseFamily::Degenerate => lambda,
    };
    Some(y)
}

fn poisson<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    if rate <= 0.0 {
        0.0
    } else {
        Poisson::new(rate).map(|p| p.sample(rng)).unwrap_or(f64::NAN)
    }
}

/// Phase-wise sample moments of a row-major series whose first row has
/// phase `start_phase`.
///
/// Means and variances average over cycle replicates (variance with
/// denominator `n - 1`). Lagged covariances pair every time `t` of phase
/// `s` with `t - d`, centred at the respective phase means.
pub fn empirical_moments(
    values: &[f64],
    units: usize,
    start_phase: usize,
    period: usize,
    d_max: usize,
) -> Result<PeriodicMoments, SimulationError> {
    if units == 0 || period == 0 || values.len() % units != 0 {
        return Err(SimulationError::InvalidArgument("series shape".into()));
    }
    let len = values.len() / units;
    let at = |t: usize, g: usize| values[t * units + g];
    let phase = |t: usize| (start_phase + t) % period;
    let mut count = vec![0usize; period];
    for t in 0..len {
        count[phase(t)] += 1;
    }
    let fewest = count.iter().copied().min().unwrap_or(0);
    if fewest < 2 {
        return Err(SimulationError::TooFewReplicates(fewest));
    }

    let mut mu = vec![vec![0.0; units]; period];
    for t in 0..len {
        for g in 0..units {
            mu[phase(t)][g] += at(t, g);
        }
    }
    for (s, row) in mu.iter_mut().enumerate() {
        for m in row.iter_mut() {
            *m /= count[s] as f64;
        }
    }

    let mut gamma = vec![vec![vec![vec![0.0; units]; units]; d_max + 1]; period];
    let mut pairs = vec![vec![0usize; d_max + 1]; period];
    for t in 0..len {
        let s = phase(t);
        for d in 0..=d_max.min(t) {
            let sd = phase(t - d);
            pairs[s][d] += 1;
            for i in 0..units {
                let xi = at(t, i) - mu[s][i];
                for j in 0..units {
                    gamma[s][d][i][j] += xi * (at(t - d, j) - mu[sd][j]);
                }
            }
        }
    }
    for s in 0..period {
        for d in 0..=d_max {
            let n = pairs[s][d];
            for row in gamma[s][d].iter_mut() {
                for v in row.iter_mut() {
                    *v = if n > 1 { *v / (n - 1) as f64 } else { f64::NAN };
                }
            }
        }
    }
    let sigma2: Vec<Vec<f64>> = (0..period).map(|s| (0..units).map(|g| gamma[s][0][g][g]).collect()).collect();
    let mut rho = gamma.clone();
    for s in 0..period {
        for d in 0..=d_max {
            let sd = (s + period * (d / period + 1) - d) % period;
            for i in 0..units {
                for j in 0..units {
                    let denom = (sigma2[s][i] * sigma2[sd][j]).sqrt();
                    rho[s][d][i][j] = if denom > 0.0 { gamma[s][d][i][j] / denom } else { 0.0 };
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

    fn mean_sd(x: &[f64]) -> (f64, f64) {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v.sqrt())
    }

    #[test]
    fn iid_poisson_mean() {
        let spec = MparSpec::par10(&[5.0], &[0.0], Poisson, None);
        let sim = simulate(&spec, 100_000, Some(0), 7, None).unwrap();
        let (m, _) = mean_sd(&sim.values);
        assert!((m - 5.0).abs() < 0.07, "{m}");
        assert!(sim.values.iter().all(|v| *v >= 0.0 && v.fract() == 0.0));
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = MparSpec::par11(&[1.0, 2.0], &[0.3, 0.5], &[0.2, 0.1], NegBin, Some(3.0));
        let a = simulate(&spec, 500, None, 42, None).unwrap();
        let b = simulate(&spec, 500, None, 42, None).unwrap();
        assert_eq!(a, b);
        let c = simulate(&spec, 500, None, 43, None).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn lambdas_follow_recursion() {
        let spec = MparSpec::par11(&[1.0, 2.0, 0.5], &[0.3, 0.5, 0.2], &[0.2, 0.1, 0.4], NegBin, Some(3.0));
        let sim = simulate(&spec, 300, Some(6), 1, None).unwrap();
        for t in 1..sim.len() {
            let p = t % 3;
            let want = spec.nu[p][0]
                + spec.phi[p][0][0][0] * sim.value(t - 1, 0)
                + spec.kappa[p][0][0][0] * sim.lambda(t - 1, 0);
            assert!((sim.lambda(t, 0) - want).abs() <= 1e-12 * want);
        }
    }

    #[test]
    fn lag_one_autocorrelation() {
        let spec = MparSpec::par10(&[1.0], &[0.5], Poisson, None);
        let sim = simulate(&spec, 1_000_000, Some(100), 3, None).unwrap();
        let pm = sim.empirical_moments(1).unwrap();
        // SE of a lag-1 autocorrelation estimate ~ sqrt((1 - rho^2)(1 + rho^2)/(n(1 - rho^2)))
        let se = ((1.0 + 0.25) / (1.0 - 0.25) / 1e6f64).sqrt();
        assert!((pm.rho[0][1][0][0] - 0.5).abs() < 3.0 * se, "{}", pm.rho[0][1][0][0]);
    }

    #[test]
    fn family_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 200_000;
        for (f, lambda, psi, var) in [
            (NegBin, 10.0, 4.0, 10.0 + 25.0f64),
            (Gamma, 3.0, 2.0, 4.5),
            (Gaussian, -1.0, 2.0, 2.0),
            (Laplace, 2.0, 1.5, 4.5),
            (Uniform, 0.5, 3.0, 3.0),
        ] {
            let x: Vec<f64> = (0..n).map(|_| sample(f, lambda, psi, &mut rng).unwrap()).collect();
            let (m, sd) = mean_sd(&x);
            assert!((m - lambda).abs() < 4.0 * var.sqrt() / (n as f64).sqrt(), "{f}: mean {m}");
            assert!((sd * sd / var - 1.0).abs() < 0.03, "{f}: var {}", sd * sd);
        }
        assert_eq!(sample(Degenerate, 2.5, 0.0, &mut rng), Some(2.5));
        assert_eq!(sample(Poisson, -1.0, 0.0, &mut rng), None);
        assert_eq!(sample(Gamma, 0.0, 1.0, &mut rng), None);
    }

    #[test]
    fn real_valued_families_allow_negative_means() {
        let spec = MparSpec::par10(&[-5.0], &[0.1], Gaussian, Some(1.0));
        let sim = simulate(&spec, 2000, None, 1, None).unwrap();
        assert!(sim.lambdas.iter().all(|l| *l < 0.0));
        let laplace = MparSpec::par10(&[-5.0], &[0.1], Laplace, Some(1.0));
        assert!(simulate(&laplace, 10, Some(0), 1, None).is_ok());
    }

    #[test]
    fn out_of_support_reported() {
        let spec = MparSpec::par10(&[1.0], &[0.5], Poisson, None);
        let init = InitialHistory { values: vec![vec![-10.0]], lambdas: vec![] };
        let err = simulate(&spec, 5, Some(0), 1, Some(&init)).unwrap_err();
        assert!(matches!(err, SimulationError::OutOfSupport { unit: 0, step: 0, .. }), "{err}");
        let gamma = MparSpec::par10(&[0.0], &[0.5], Gamma, Some(2.0));
        let zero = InitialHistory { values: vec![vec![0.0]], lambdas: vec![] };
        assert!(simulate(&gamma, 5, Some(0), 1, Some(&zero)).is_err());
    }

    #[test]
    fn explicit_history() {
        let spec = MparSpec::par10(&[0.0], &[1.0], Degenerate, None);
        let init = InitialHistory { values: vec![vec![3.0]], lambdas: vec![] };
        let sim = simulate(&spec, 4, Some(0), 1, Some(&init)).unwrap();
        assert_eq!(sim.values, vec![3.0; 4]);
        let wrong = InitialHistory { values: vec![], lambdas: vec![] };
        assert!(simulate(&spec, 4, Some(0), 1, Some(&wrong)).is_err());
    }

    #[test]
    fn replicates_are_distinct_and_reproducible() {
        let spec = MparSpec::par10(&[2.0, 1.0], &[0.4, 0.6], NegBin, Some(5.0));
        let a = simulate_replicates(&spec, 4, 50, None, 9).unwrap();
        let b = simulate_replicates(&spec, 4, 50, None, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].values, a[1].values);
    }

    #[test]
    fn constant_series_moments() {
        let values = vec![4.0; 12];
        let pm = empirical_moments(&values, 1, 0, 3, 2).unwrap();
        assert!(pm.mu.iter().all(|m| m[0] == 4.0));
        assert!(pm.sigma2.iter().all(|v| v[0] == 0.0));
    }

    #[test]
    fn each_phase_averages_its_cycles() {
        // 6 cycles of 52 weeks: phase s holds s + 52 k
        let values: Vec<f64> = (0..6 * 52).map(|t| t as f64).collect();
        let pm = empirical_moments(&values, 1, 0, 52, 1).unwrap();
        for s in 0..52 {
            let want = (0..6).map(|k| (s + 52 * k) as f64).sum::<f64>() / 6.0;
            assert_eq!(pm.mu[s][0], want);
        }
    }

    #[test]
    fn too_few_replicates() {
        let values = vec![1.0; 5];
        assert_eq!(
            empirical_moments(&values, 1, 0, 3, 1).unwrap_err(),
            SimulationError::TooFewReplicates(1)
        );
    }
}
