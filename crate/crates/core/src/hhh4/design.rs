use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::SurveillanceSeries;
use crate::error::FitError;

/// Normalized geometric lag weights `p (1 - p)^(q - 1)`, `q = 1..=lags`.
pub fn lag_weights(p: f64, lags: usize) -> Result<Vec<f64>, FitError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(FitError::InvalidDecay(p));
    }
    if lags == 0 {
        return Err(FitError::Config("at least one lag is required".into()));
    }
    let raw: Vec<f64> = (0..lags).map(|q| p * (1.0 - p).powi(q as i32)).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// One term of a log-linear predictor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Term {
    Intercept,
    /// `sin(k omega s)` with `omega = 2 pi / L`
    Sin(u32),
    Cos(u32),
    /// Indicator of the configured phases (by default the first and last
    /// phase of the cycle).
    Indicator,
    /// Fixed `log e_g` of the receiving unit; carries no coefficient.
    Offset,
}

impl Term {
    pub fn has_coefficient(self) -> bool {
        self != Term::Offset
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Intercept => f.write_str("intercept"),
            Term::Sin(k) => write!(f, "sin{k}"),
            Term::Cos(k) => write!(f, "cos{k}"),
            Term::Indicator => f.write_str("indicator"),
            Term::Offset => f.write_str("offset"),
        }
    }
}

impl FromStr for Term {
    type Err = FitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        let harmonic = |rest: &str| -> Result<u32, FitError> {
            let rest = rest.trim_start_matches('(').trim_end_matches(')');
            if rest.is_empty() {
                return Ok(1);
            }
            rest.parse().map_err(|_| FitError::Config(format!("unknown term `{s}`")))
        };
        match s.as_str() {
            "intercept" | "1" => Ok(Term::Intercept),
            "indicator" | "x" => Ok(Term::Indicator),
            "offset" | "population" => Ok(Term::Offset),
            _ if s.starts_with("sin") => Ok(Term::Sin(harmonic(&s[3..])?)),
            _ if s.starts_with("cos") => Ok(Term::Cos(harmonic(&s[3..])?)),
            _ => Err(FitError::Config(format!("unknown term `{s}`"))),
        }
    }
}

impl TryFrom<String> for Term {
    type Error = FitError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Term> for String {
    fn from(t: Term) -> String {
        t.to_string()
    }
}

/// Model formula for the endemic-epidemic model with distributed lags.
///
/// Endemic and own-lag coefficients are unit-specific. Cross-unit
/// coefficients are shared by all receiving units when `share_cross` is
/// set. An empty term list removes the component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HhhConfig {
    #[serde(rename = "Q", alias = "lags")]
    pub lags: usize,
    pub endemic: Vec<Term>,
    pub epidemic_own: Vec<Term>,
    pub epidemic_cross: Vec<Term>,
    pub share_cross: bool,
    pub psi_per_unit: bool,
    /// Phases where the indicator is 1; `None` means `{0, L - 1}`.
    pub indicator_phases: Option<Vec<usize>>,
}

impl Default for HhhConfig {
    fn default() -> Self {
        use Term::*;
        HhhConfig {
            lags: 5,
            endemic: vec![Offset, Intercept, Sin(1), Cos(1)],
            epidemic_own: vec![Intercept, Indicator, Sin(1), Cos(1)],
            epidemic_cross: vec![Offset, Intercept, Sin(1), Cos(1)],
            share_cross: true,
            psi_per_unit: true,
            indicator_phases: None,
        }
    }
}

impl HhhConfig {
    /// Same endemic part as the default, no epidemic components.
    pub fn endemic_only() -> HhhConfig {
        HhhConfig { epidemic_own: Vec::new(), epidemic_cross: Vec::new(), ..HhhConfig::default() }
    }

    pub fn has_epidemic(&self) -> bool {
        !self.epidemic_own.is_empty() || !self.epidemic_cross.is_empty()
    }

    pub fn indicator_set(&self, period: usize) -> BTreeSet<usize> {
        match &self.indicator_phases {
            Some(v) => v.iter().copied().collect(),
            None => [0, period.saturating_sub(1)].into_iter().collect(),
        }
    }

    pub fn validate(&self, period: usize) -> Result<(), FitError> {
        if self.lags == 0 {
            return Err(FitError::Config("Q must be at least 1".into()));
        }
        if self.endemic.iter().all(|t| !t.has_coefficient()) {
            return Err(FitError::Config("the endemic component needs at least one coefficient".into()));
        }
        for (name, terms) in [
            ("endemic", &self.endemic),
            ("epidemic_own", &self.epidemic_own),
            ("epidemic_cross", &self.epidemic_cross),
        ] {
            let set: BTreeSet<Term> = terms.iter().copied().collect();
            if set.len() != terms.len() {
                return Err(FitError::Config(format!("{name}: repeated term")));
            }
            if !terms.is_empty() && set.iter().all(|t| !t.has_coefficient()) {
                return Err(FitError::Config(format!("{name}: no coefficient terms")));
            }
            for t in &set {
                match *t {
                    Term::Sin(k) | Term::Cos(k) => {
                        if k == 0 || 2 * k as usize >= period {
                            return Err(FitError::Config(format!(
                                "{name}: frequency {k} must lie in 1..{}",
                                period.div_ceil(2)
                            )));
                        }
                        let partner = if let Term::Sin(_) = t { Term::Cos(k) } else { Term::Sin(k) };
                        if !set.contains(&partner) {
                            return Err(FitError::Config(format!("{name}: {t} needs its partner {partner}")));
                        }
                    }
                    _ => {}
                }
            }
        }
        if let Some(p) = self.indicator_set(period).iter().find(|p| **p >= period) {
            return Err(FitError::Config(format!("indicator phase {p} outside period {period}")));
        }
        Ok(())
    }
}

/// `eta = offset + sum_j theta[j] * x_j` over a sparse set of coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictor {
    pub offset: f64,
    pub coef: Vec<(usize, f64)>,
}

impl Predictor {
    pub fn eta(&self, theta: &[f64]) -> f64 {
        self.offset + self.coef.iter().map(|(j, x)| theta[*j] * x).sum::<f64>()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    Endemic,
    Own,
    Cross,
}

/// Predictors of `log nu_gs`, `log phi_ggs` and `log phi_g'gs` (`g' != g`)
/// for every phase `s` and receiving unit `g`, indexed `[s][g]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Design {
    pub units: usize,
    pub period: usize,
    pub lags: usize,
    pub names: Vec<String>,
    pub endemic: Vec<Vec<Predictor>>,
    pub own: Option<Vec<Vec<Predictor>>>,
    pub cross: Option<Vec<Vec<Predictor>>>,
    /// Index of `log psi` for each unit.
    pub psi_index: Vec<usize>,
}

impl Design {
    pub fn n_params(&self) -> usize {
        self.names.len()
    }

    /// Number of coefficients in the mean structure.
    pub fn n_mean_params(&self) -> usize {
        self.names.len() - self.psi_index.iter().collect::<BTreeSet<_>>().len()
    }

    pub fn component(&self, c: Component) -> Option<&Vec<Vec<Predictor>>> {
        match c {
            Component::Endemic => Some(&self.endemic),
            Component::Own => self.own.as_ref(),
            Component::Cross => self.cross.as_ref(),
        }
    }
}

fn covariate(term: Term, phase: usize, period: usize, indicator: &BTreeSet<usize>) -> f64 {
    let omega = 2.0 * PI / period as f64;
    // calendar phases are numbered from 1 in the seasonal terms
    let s = (phase + 1) as f64;
    match term {
        Term::Intercept => 1.0,
        Term::Sin(k) => (k as f64 * omega * s).sin(),
        Term::Cos(k) => (k as f64 * omega * s).cos(),
        Term::Indicator => f64::from(indicator.contains(&phase)),
        Term::Offset => 0.0,
    }
}

/// Assembles the per-phase predictor rows and names the coefficient vector.
///
/// Layout: endemic (unit-major), own-lag (unit-major), cross (shared or
/// unit-major), then `log psi` (per unit or one shared value).
pub fn build_predictors(config: &HhhConfig, data: &SurveillanceSeries) -> Result<Design, FitError> {
    data.check()?;
    let period = data.period;
    config.validate(period)?;
    let g_count = data.units();
    let indicator = config.indicator_set(period);
    let mut names = Vec::new();

    let block = |label: &str, terms: &[Term], per_unit: bool, names: &mut Vec<String>| {
        if terms.is_empty() {
            return None;
        }
        let coef_terms: Vec<Term> = terms.iter().copied().filter(|t| t.has_coefficient()).collect();
        let offset = terms.contains(&Term::Offset);
        let mut index = vec![vec![0usize; coef_terms.len()]; g_count];
        if per_unit {
            for (g, row) in index.iter_mut().enumerate() {
                for (k, t) in coef_terms.iter().enumerate() {
                    row[k] = names.len();
                    names.push(format!("{label}.{t}.{}", data.unit_names[g]));
                }
            }
        } else {
            let shared: Vec<usize> = coef_terms
                .iter()
                .map(|t| {
                    names.push(format!("{label}.{t}"));
                    names.len() - 1
                })
                .collect();
            index.iter_mut().for_each(|row| row.clone_from(&shared));
        }
        let preds = (0..period)
            .map(|s| {
                (0..g_count)
                    .map(|g| Predictor {
                        offset: if offset { data.populations[g].ln() } else { 0.0 },
                        coef: coef_terms
                            .iter()
                            .zip(&index[g])
                            .map(|(t, j)| (*j, covariate(*t, s, period, &indicator)))
                            .collect(),
                    })
                    .collect()
            })
            .collect();
        Some(preds)
    };

    let endemic = block("endemic", &config.endemic, true, &mut names).expect("validated non-empty");
    let own = block("own", &config.epidemic_own, true, &mut names);
    let cross = if g_count > 1 {
        block("cross", &config.epidemic_cross, !config.share_cross, &mut names)
    } else {
        None
    };
    let psi_index = if config.psi_per_unit {
        (0..g_count)
            .map(|g| {
                names.push(format!("log_psi.{}", data.unit_names[g]));
                names.len() - 1
            })
            .collect()
    } else {
        names.push("log_psi".into());
        vec![names.len() - 1; g_count]
    };
    Ok(Design { units: g_count, period, lags: config.lags, names, endemic, own, cross, psi_index })
}
