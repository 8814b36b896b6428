use serde::{Deserialize, Serialize};

use crate::error::{FitError, SimulationError};
use crate::moments::PeriodicMoments;
use crate::simulate::{empirical_moments, SimulatedSeries};

/// Multivariate count series with unit populations and calendar phases.
/// Time `t` (0-based) has phase `(start_phase + t) mod period`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurveillanceSeries {
    /// `counts[t][g]`
    pub counts: Vec<Vec<u64>>,
    pub unit_names: Vec<String>,
    pub populations: Vec<f64>,
    pub start_phase: usize,
    pub period: usize,
}

impl SurveillanceSeries {
    pub fn new(
        counts: Vec<Vec<u64>>,
        unit_names: Vec<String>,
        populations: Vec<f64>,
        start_phase: usize,
        period: usize,
    ) -> Result<SurveillanceSeries, FitError> {
        let s = SurveillanceSeries { counts, unit_names, populations, start_phase, period };
        s.check()?;
        Ok(s)
    }

    /// Wraps a simulated path; every value must be a non-negative integer.
    pub fn from_simulation(
        sim: &SimulatedSeries,
        unit_names: Vec<String>,
        populations: Vec<f64>,
    ) -> Result<SurveillanceSeries, FitError> {
        let counts = (0..sim.len())
            .map(|t| {
                sim.row(t)
                    .iter()
                    .map(|&v| {
                        if v >= 0.0 && v.fract() == 0.0 && v.is_finite() {
                            Ok(v as u64)
                        } else {
                            Err(FitError::Data(format!("non-count value {v} at t = {t}")))
                        }
                    })
                    .collect::<Result<Vec<u64>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        SurveillanceSeries::new(counts, unit_names, populations, 0, sim.period)
    }

    pub fn check(&self) -> Result<(), FitError> {
        let g = self.unit_names.len();
        if g == 0 {
            return Err(FitError::Data("no units".into()));
        }
        if self.populations.len() != g {
            return Err(FitError::Data(format!("{} populations for {g} units", self.populations.len())));
        }
        if let Some(bad) = self.populations.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
            return Err(FitError::Data(format!("population {bad} must be positive")));
        }
        if self.period == 0 || self.start_phase >= self.period {
            return Err(FitError::Data(format!(
                "start phase {} outside period {}",
                self.start_phase, self.period
            )));
        }
        if let Some(t) = self.counts.iter().position(|row| row.len() != g) {
            return Err(FitError::Data(format!("row {t} does not have {g} counts")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn units(&self) -> usize {
        self.unit_names.len()
    }

    pub fn phase(&self, t: usize) -> usize {
        (self.start_phase + t) % self.period
    }

    pub fn value(&self, t: usize, g: usize) -> f64 {
        self.counts[t][g] as f64
    }

    /// Row-major values as reals.
    pub fn flat_values(&self) -> Vec<f64> {
        self.counts.iter().flatten().map(|&c| c as f64).collect()
    }

    pub fn empirical_moments(&self, d_max: usize) -> Result<PeriodicMoments, SimulationError> {
        empirical_moments(&self.flat_values(), self.units(), self.start_phase, self.period, d_max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("u{i}")).collect()
    }

    #[test]
    fn phases_wrap() {
        let s = SurveillanceSeries::new(vec![vec![1]; 10], names(1), vec![1.0], 50, 52).unwrap();
        assert_eq!(s.phase(0), 50);
        assert_eq!(s.phase(2), 0);
        assert_eq!(s.phase(2 + 52), 0);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(SurveillanceSeries::new(vec![vec![1, 2]], names(1), vec![1.0], 0, 4).is_err());
        assert!(SurveillanceSeries::new(vec![vec![1]], names(1), vec![0.0], 0, 4).is_err());
        assert!(SurveillanceSeries::new(vec![vec![1]], names(1), vec![1.0], 4, 4).is_err());
    }

    #[test]
    fn simulated_non_counts_rejected() {
        let sim = SimulatedSeries {
            units: 1,
            period: 1,
            values: vec![1.0, 2.5],
            lambdas: vec![1.0, 1.0],
            seed: 0,
            burn_in: 0,
        };
        assert!(SurveillanceSeries::from_simulation(&sim, names(1), vec![1.0]).is_err());
    }
}
