use log::debug;
use nalgebra::{DMatrix, DVector};

use super::augment::pad_observation_lags;
use super::companion::{companion_unchecked, cycle_product, spectral_radius, CompanionMatrix};
use super::StackedMoments;
use crate::error::MomentsError;
use crate::model::{MparSpec, VarianceCoefficients};

/// Companion matrices and stacked dispersion vectors for an `R = 0` spec.
#[derive(Clone, Debug)]
pub(crate) struct Prepared {
    pub spec: MparSpec,
    pub companions: Vec<CompanionMatrix>,
    pub dispersion: Vec<Vec<VarianceCoefficients>>,
}

impl Prepared {
    pub fn new(spec: &MparSpec) -> Result<Prepared, MomentsError> {
        spec.check()?;
        if spec.mean_lags != 0 {
            return Err(MomentsError::Precondition("R = 0; augment the model first".into()));
        }
        let spec = pad_observation_lags(spec);
        let companions = (0..spec.period).map(|t| companion_unchecked(&spec, t)).collect();
        let dispersion = (0..spec.period)
            .map(|t| spec.variance_at(t))
            .collect::<Result<_, _>>()?;
        Ok(Prepared { spec, companions, dispersion })
    }

    pub fn dim(&self) -> usize {
        self.companions[0].dim()
    }

    pub fn period(&self) -> usize {
        self.spec.period
    }

    pub fn units(&self) -> usize {
        self.spec.units
    }

    /// Index of the first entry of the current-observation block.
    pub fn last_block(&self) -> usize {
        self.dim() - self.units()
    }

    pub fn prev(&self, t: usize) -> usize {
        (t + self.period() - 1) % self.period()
    }

    pub fn linear_variance(&self) -> bool {
        self.dispersion.iter().flatten().all(|v| v.a == 0.0)
    }

    /// Spectral radius of the mean recursion over one cycle, i.e. of the
    /// lower-right `QG x QG` block of the monodromy matrix.
    pub fn mean_radius(&self) -> f64 {
        let big = cycle_product(&self.companions, self.period() - 1);
        let n = self.dim();
        spectral_radius(&big.view((1, 1), (n - 1, n - 1)).into_owned())
    }

    /// Stationary stacked means by solving `(I - B) m = c` on the
    /// partition `[[1, 0], [c, B]]` of the monodromy matrix for the last
    /// phase, then propagating `mu_t = phi_t mu_{t-1}` through the cycle.
    pub fn means(&self) -> Result<Vec<DVector<f64>>, MomentsError> {
        let radius = self.mean_radius();
        if !(radius < 1.0) {
            return Err(MomentsError::NotMeanStationary { radius });
        }
        let l = self.period();
        let n = self.dim();
        let big = cycle_product(&self.companions, l - 1);
        let b = big.view((1, 1), (n - 1, n - 1));
        let c = big.view((1, 0), (n - 1, 1)).into_owned();
        let lhs = DMatrix::identity(n - 1, n - 1) - b;
        let tail = lhs
            .lu()
            .solve(&c)
            .ok_or_else(|| MomentsError::Singular("mean system I - B".into()))?;
        let mut last = DVector::zeros(n);
        last[0] = 1.0;
        last.rows_mut(1, n - 1).copy_from(&tail.column(0));

        let mut out = Vec::with_capacity(l);
        let mut prev = last;
        for t in 0..l {
            let cur = &self.companions[t].data * &prev;
            out.push(cur.clone());
            prev = cur;
        }
        Ok(out)
    }

    /// One application of the second-moment recursion.
    pub fn step(&self, prev: &DMatrix<f64>, t: usize) -> DMatrix<f64> {
        let phi = &self.companions[t].data;
        let mut m = phi * prev * phi.transpose();
        let start = self.last_block();
        for (g, v) in self.dispersion[t].iter().enumerate() {
            let i = start + g;
            m[(i, i)] = (v.a + 1.0) * m[(i, i)] + v.b * m[(0, i)] + v.c;
        }
        m
    }
}

/// Stationary means `mu~_t = E(Y~_t)` for every phase; first entry is 1.
pub fn stationary_means(spec: &MparSpec) -> Result<Vec<DVector<f64>>, MomentsError> {
    Prepared::new(spec)?.means()
}

pub fn moment_step(
    prev: &StackedMoments,
    spec: &MparSpec,
    t: usize,
) -> Result<StackedMoments, MomentsError> {
    let prep = Prepared::new(spec)?;
    if t >= prep.period() {
        return Err(MomentsError::Precondition(format!("phase {t} < L = {}", prep.period())));
    }
    if prev.phase != prep.prev(t) {
        return Err(MomentsError::Precondition(format!(
            "previous moments at phase {} (got {})",
            prep.prev(t),
            prev.phase
        )));
    }
    if prev.m.nrows() != prep.dim() || prev.m.ncols() != prep.dim() {
        return Err(MomentsError::Precondition(format!(
            "{0}x{0} moment matrix (got {1}x{2})",
            prep.dim(),
            prev.m.nrows(),
            prev.m.ncols()
        )));
    }
    Ok(StackedMoments { phase: t, m: prep.step(&prev.m, t) })
}

/// Settings for the fixed-point sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterateOptions {
    /// Convergence threshold on the largest entrywise change over a sweep,
    /// measured relative to `max(1, |entry|)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Any entry above this magnitude is treated as divergence.
    pub divergence_cap: f64,
}

impl Default for IterateOptions {
    fn default() -> Self {
        IterateOptions { tol: 1e-12, max_iter: 1000, divergence_cap: 1e15 }
    }
}

/// Fixed-point iteration of the second-moment recursion, starting from
/// `mu~ mu~^T` at the last phase and sweeping the cycle until the moment
/// matrices stop changing.
pub fn iterate_moments(
    spec: &MparSpec,
    opts: &IterateOptions,
) -> Result<Vec<StackedMoments>, MomentsError> {
    let prep = Prepared::new(spec)?;
    iterate_prepared(&prep, opts)
}

pub(crate) fn iterate_prepared(
    prep: &Prepared,
    opts: &IterateOptions,
) -> Result<Vec<StackedMoments>, MomentsError> {
    let means = prep.means()?;
    let l = prep.period();
    let mut prev = &means[l - 1] * means[l - 1].transpose();
    let mut current: Vec<DMatrix<f64>> = Vec::new();
    let mut change = f64::INFINITY;
    for sweep in 1..=opts.max_iter {
        let mut next = Vec::with_capacity(l);
        let mut magnitude = 0.0f64;
        change = 0.0;
        for t in 0..l {
            let m = prep.step(&prev, t);
            for (k, &x) in m.iter().enumerate() {
                if !x.is_finite() {
                    magnitude = f64::INFINITY;
                    break;
                }
                magnitude = magnitude.max(x.abs());
                if let Some(old) = current.get(t) {
                    let d = (x - old[k]).abs() / x.abs().max(1.0);
                    change = change.max(d);
                }
            }
            if !(magnitude <= opts.divergence_cap) {
                return Err(MomentsError::Diverged { iterations: sweep, magnitude });
            }
            next.push(m.clone());
            prev = m;
        }
        let first = current.is_empty();
        current = next;
        if !first && change < opts.tol {
            debug!("moment recursion converged after {sweep} sweeps (change {change:e})");
            return Ok(current
                .into_iter()
                .enumerate()
                .map(|(phase, m)| StackedMoments { phase, m: symmetrize(m) })
                .collect());
        }
    }
    Err(MomentsError::NotConverged { iterations: opts.max_iter, change })
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}
