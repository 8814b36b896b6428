//! Model specification for MPAR(G, Q, R) processes.
//!
//! The conditional mean follows
//!
//! ```text
//! lambda_t = nu_t + sum_q phi_qt Y_{t-q} + sum_r kappa_rt lambda_{t-r}
//! ```
//!
//! and each unit draws `Y_gt | past ~ F(lambda_gt, psi_gt)` independently,
//! with conditional variance `a lambda^2 + b lambda + c`. All parameter
//! arrays are indexed by phase `t mod L`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::SpecError;

/// Conditional response distribution, parameterized by its mean and a
/// dispersion value `psi`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ResponseFamily {
    /// Mean `lambda`, size `psi`; variance `lambda + lambda^2 / psi`.
    NegBin,
    Poisson,
    /// Shape `psi`, rate `psi / lambda`.
    Gamma,
    /// Variance `psi`.
    Gaussian,
    /// Scale `psi`; variance `2 psi^2`.
    Laplace,
    /// Half-width `psi`; variance `psi^2 / 3`.
    Uniform,
    /// Point mass at the conditional mean. Only produced by
    /// [`crate::moments::augment_model`] for the lagged-mean units.
    Degenerate,
}

impl ResponseFamily {
    pub const ALL: [ResponseFamily; 6] = [
        ResponseFamily::NegBin,
        ResponseFamily::Poisson,
        ResponseFamily::Gamma,
        ResponseFamily::Gaussian,
        ResponseFamily::Laplace,
        ResponseFamily::Uniform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ResponseFamily::NegBin => "negbin",
            ResponseFamily::Poisson => "poisson",
            ResponseFamily::Gamma => "gamma",
            ResponseFamily::Gaussian => "gaussian",
            ResponseFamily::Laplace => "laplace",
            ResponseFamily::Uniform => "uniform",
            ResponseFamily::Degenerate => "degenerate",
        }
    }

    pub fn requires_psi(self) -> bool {
        !matches!(self, ResponseFamily::Poisson | ResponseFamily::Degenerate)
    }

    /// Families whose support is the non-negative half line; these force
    /// non-negative `nu`, `phi` and `kappa`.
    pub fn non_negative_support(self) -> bool {
        matches!(
            self,
            ResponseFamily::NegBin | ResponseFamily::Poisson | ResponseFamily::Gamma
        )
    }

    pub fn is_count(self) -> bool {
        matches!(self, ResponseFamily::NegBin | ResponseFamily::Poisson)
    }

    /// Whether `lambda` is an admissible conditional mean.
    pub fn mean_in_support(self, lambda: f64) -> bool {
        if !lambda.is_finite() {
            return false;
        }
        match self {
            ResponseFamily::NegBin | ResponseFamily::Poisson => lambda >= 0.0,
            ResponseFamily::Gamma => lambda > 0.0,
            _ => true,
        }
    }
}

impl fmt::Display for ResponseFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ResponseFamily {
    type Err = SpecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace(['_', '-', ' ', '.'], "").as_str() {
            "negbin" | "negativebinomial" | "nb" => Ok(ResponseFamily::NegBin),
            "poisson" => Ok(ResponseFamily::Poisson),
            "gamma" => Ok(ResponseFamily::Gamma),
            "gaussian" | "normal" => Ok(ResponseFamily::Gaussian),
            "laplace" => Ok(ResponseFamily::Laplace),
            "uniform" => Ok(ResponseFamily::Uniform),
            "degenerate" => Ok(ResponseFamily::Degenerate),
            _ => Err(SpecError::UnsupportedFamily(s.to_string())),
        }
    }
}

impl TryFrom<String> for ResponseFamily {
    type Error = SpecError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<ResponseFamily> for String {
    fn from(f: ResponseFamily) -> String {
        f.name().to_string()
    }
}

/// Coefficients of the quadratic variance function `v(lambda) = a lambda^2 + b lambda + c`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl VarianceCoefficients {
    pub const ZERO: VarianceCoefficients = VarianceCoefficients { a: 0.0, b: 0.0, c: 0.0 };

    pub fn eval(&self, lambda: f64) -> f64 {
        self.a * lambda * lambda + self.b * lambda + self.c
    }
}

pub fn variance_coefficients(
    family: ResponseFamily,
    psi: Option<f64>,
) -> Result<VarianceCoefficients, SpecError> {
    let need = |psi: Option<f64>| -> Result<f64, SpecError> {
        match psi {
            None => Err(SpecError::MissingDispersion {
                family: family.to_string(),
                unit: 0,
                phase: 0,
            }),
            Some(v) if !(v > 0.0) || !v.is_finite() => Err(SpecError::InvalidDispersion {
                family: family.to_string(),
                value: v,
            }),
            Some(v) => Ok(v),
        }
    };
    let (a, b, c) = match family {
        ResponseFamily::NegBin => (1.0 / need(psi)?, 1.0, 0.0),
        ResponseFamily::Poisson => (0.0, 1.0, 0.0),
        ResponseFamily::Gamma => (1.0 / need(psi)?, 0.0, 0.0),
        ResponseFamily::Gaussian => (0.0, 0.0, need(psi)?),
        ResponseFamily::Laplace => {
            let s = need(psi)?;
            (0.0, 0.0, 2.0 * s * s)
        }
        ResponseFamily::Uniform => {
            let s = need(psi)?;
            (0.0, 0.0, s * s / 3.0)
        }
        ResponseFamily::Degenerate => (0.0, 0.0, 0.0),
    };
    Ok(VarianceCoefficients { a, b, c })
}

/// `Var(Y | past)` for a family at conditional mean `lambda`.
pub fn conditional_variance(
    family: ResponseFamily,
    lambda: f64,
    psi: Option<f64>,
) -> Result<f64, SpecError> {
    Ok(variance_coefficients(family, psi)?.eval(lambda))
}

/// Full parameterization of an MPAR(G, Q, R) process.
///
/// Shapes: `nu[L][G]`, `phi[L][Q][G][G]`, `kappa[L][R][G][G]`, `family[G]`,
/// `psi[L][G]`. In `phi[t][q]` (lag `q + 1`) the entry at row `g`, column
/// `h` multiplies `Y_{h, t-q-1}` in the conditional mean of unit `g`;
/// `kappa` follows the same layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MparSpec {
    #[serde(rename = "G")]
    pub units: usize,
    #[serde(rename = "Q")]
    pub obs_lags: usize,
    #[serde(rename = "R")]
    pub mean_lags: usize,
    #[serde(rename = "L")]
    pub period: usize,
    pub nu: Vec<Vec<f64>>,
    pub phi: Vec<Vec<Vec<Vec<f64>>>>,
    pub kappa: Vec<Vec<Vec<Vec<f64>>>>,
    pub family: Vec<ResponseFamily>,
    pub psi: Vec<Vec<Option<f64>>>,
}

fn check_len(what: &str, got: usize, want: usize) -> Result<(), SpecError> {
    if got != want {
        return Err(SpecError::DimensionMismatch(format!(
            "{what} has length {got}, expected {want}"
        )));
    }
    Ok(())
}

impl MparSpec {
    /// Univariate PAR(1, 1) spec with one entry per phase in each slice.
    /// A `kappa` of all zeros still yields `R = 1`.
    pub fn par11(
        nu: &[f64],
        phi: &[f64],
        kappa: &[f64],
        family: ResponseFamily,
        psi: Option<f64>,
    ) -> MparSpec {
        let l = nu.len();
        MparSpec {
            units: 1,
            obs_lags: 1,
            mean_lags: 1,
            period: l,
            nu: nu.iter().map(|&v| vec![v]).collect(),
            phi: phi.iter().map(|&v| vec![vec![vec![v]]]).collect(),
            kappa: kappa.iter().map(|&v| vec![vec![vec![v]]]).collect(),
            family: vec![family],
            psi: vec![vec![psi]; l],
        }
    }

    /// Same as [`MparSpec::par11`] without the lagged-mean term (`R = 0`).
    pub fn par10(nu: &[f64], phi: &[f64], family: ResponseFamily, psi: Option<f64>) -> MparSpec {
        let mut spec = MparSpec::par11(nu, phi, &vec![0.0; nu.len()], family, psi);
        spec.mean_lags = 0;
        spec.kappa = vec![Vec::new(); nu.len()];
        spec
    }

    pub fn validate(self) -> Result<MparSpec, SpecError> {
        self.check()?;
        Ok(self)
    }

    /// Validation without taking ownership.
    pub fn check(&self) -> Result<(), SpecError> {
        let (g, q, r, l) = (self.units, self.obs_lags, self.mean_lags, self.period);
        if g == 0 {
            return Err(SpecError::DimensionMismatch("G must be positive".into()));
        }
        if l == 0 {
            return Err(SpecError::DimensionMismatch("L must be positive".into()));
        }
        check_len("nu", self.nu.len(), l)?;
        check_len("phi", self.phi.len(), l)?;
        check_len("kappa", self.kappa.len(), l)?;
        check_len("psi", self.psi.len(), l)?;
        check_len("family", self.family.len(), g)?;
        for t in 0..l {
            check_len(&format!("nu[{t}]"), self.nu[t].len(), g)?;
            check_len(&format!("psi[{t}]"), self.psi[t].len(), g)?;
            check_len(&format!("phi[{t}]"), self.phi[t].len(), q)?;
            check_len(&format!("kappa[{t}]"), self.kappa[t].len(), r)?;
            for (name, arr) in [("phi", &self.phi[t]), ("kappa", &self.kappa[t])] {
                for (k, m) in arr.iter().enumerate() {
                    check_len(&format!("{name}[{t}][{k}]"), m.len(), g)?;
                    for (row_idx, row) in m.iter().enumerate() {
                        check_len(&format!("{name}[{t}][{k}][{row_idx}]"), row.len(), g)?;
                    }
                }
            }
        }

        let restricted = self.family.iter().any(|f| f.non_negative_support());
        let check_value = |name: String, v: f64| -> Result<(), SpecError> {
            if !v.is_finite() {
                return Err(SpecError::NonFinite(name));
            }
            if restricted && v < 0.0 {
                return Err(SpecError::NegativeParameter { name, value: v });
            }
            Ok(())
        };
        for t in 0..l {
            for (i, &v) in self.nu[t].iter().enumerate() {
                check_value(format!("nu[{t}][{i}]"), v)?;
            }
            for (name, arr) in [("phi", &self.phi[t]), ("kappa", &self.kappa[t])] {
                for (k, m) in arr.iter().enumerate() {
                    for (i, row) in m.iter().enumerate() {
                        for (j, &v) in row.iter().enumerate() {
                            check_value(format!("{name}[{t}][{k}][{i}][{j}]"), v)?;
                        }
                    }
                }
            }
        }

        for t in 0..l {
            for (unit, &family) in self.family.iter().enumerate() {
                if !family.requires_psi() {
                    continue;
                }
                match self.psi[t][unit] {
                    None => {
                        return Err(SpecError::MissingDispersion {
                            family: family.to_string(),
                            unit,
                            phase: t,
                        })
                    }
                    Some(v) => {
                        variance_coefficients(family, Some(v))?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Phase index for a possibly negative time offset.
    pub fn phase(&self, t: isize) -> usize {
        t.rem_euclid(self.period as isize) as usize
    }

    /// Variance-function coefficients of every unit at phase `t`.
    pub fn variance_at(&self, t: usize) -> Result<Vec<VarianceCoefficients>, SpecError> {
        self.family
            .iter()
            .enumerate()
            .map(|(g, &f)| {
                variance_coefficients(f, self.psi[t][g]).map_err(|e| match e {
                    SpecError::MissingDispersion { family, .. } => SpecError::MissingDispersion {
                        family,
                        unit: g,
                        phase: t,
                    },
                    other => other,
                })
            })
            .collect()
    }

    /// `phi` for lag `lag` (1-based) at phase `t` as a G x G matrix.
    pub fn phi_matrix(&self, t: usize, lag: usize) -> DMatrix<f64> {
        nested_matrix(&self.phi[t][lag - 1])
    }

    pub fn kappa_matrix(&self, t: usize, lag: usize) -> DMatrix<f64> {
        nested_matrix(&self.kappa[t][lag - 1])
    }

    pub fn has_quadratic_variance(&self) -> Result<bool, SpecError> {
        for t in 0..self.period {
            if self.variance_at(t)?.iter().any(|v| v.a != 0.0) {
                return Ok(true);
            }
        }
        Ok(false)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }
}

pub(crate) fn nested_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, m, |i, j| rows[i][j])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bivariate(l: usize) -> MparSpec {
        MparSpec {
            units: 2,
            obs_lags: 1,
            mean_lags: 0,
            period: l,
            nu: vec![vec![1.0, 2.0]; l],
            phi: vec![vec![vec![vec![0.3, 0.1], vec![0.05, 0.4]]]; l],
            kappa: vec![Vec::new(); l],
            family: vec![ResponseFamily::NegBin, ResponseFamily::NegBin],
            psi: vec![vec![Some(10.0), Some(5.0)]; l],
        }
    }

    #[test]
    fn table_of_coefficients() {
        let vc = |f, p| variance_coefficients(f, p).unwrap();
        assert_eq!(vc(ResponseFamily::NegBin, Some(10.0)), VarianceCoefficients { a: 0.1, b: 1.0, c: 0.0 });
        assert_eq!(vc(ResponseFamily::Poisson, None), VarianceCoefficients { a: 0.0, b: 1.0, c: 0.0 });
        assert_eq!(vc(ResponseFamily::Gamma, Some(4.0)), VarianceCoefficients { a: 0.25, b: 0.0, c: 0.0 });
        assert_eq!(vc(ResponseFamily::Gaussian, Some(4.0)), VarianceCoefficients { a: 0.0, b: 0.0, c: 4.0 });
        assert_eq!(vc(ResponseFamily::Laplace, Some(1.0)), VarianceCoefficients { a: 0.0, b: 0.0, c: 2.0 });
        assert_eq!(vc(ResponseFamily::Uniform, Some(3.0)), VarianceCoefficients { a: 0.0, b: 0.0, c: 3.0 });
    }

    #[test]
    fn dispersion_errors() {
        assert!(matches!(
            variance_coefficients(ResponseFamily::NegBin, None),
            Err(SpecError::MissingDispersion { .. })
        ));
        for bad in [0.0, -1.0, f64::NAN] {
            assert!(matches!(
                variance_coefficients(ResponseFamily::Gamma, Some(bad)),
                Err(SpecError::InvalidDispersion { .. })
            ));
        }
        // Poisson ignores psi
        assert!(variance_coefficients(ResponseFamily::Poisson, Some(-3.0)).is_ok());
    }

    #[test]
    fn conditional_variance_examples() {
        assert_eq!(conditional_variance(ResponseFamily::NegBin, 10.0, Some(10.0)).unwrap(), 20.0);
        assert_eq!(conditional_variance(ResponseFamily::Poisson, 3.5, None).unwrap(), 3.5);
        assert_eq!(conditional_variance(ResponseFamily::Gaussian, -2.0, Some(4.0)).unwrap(), 4.0);
    }

    #[test]
    fn unsupported_families_rejected() {
        for name in ["beta", "binomial"] {
            let err = name.parse::<ResponseFamily>().unwrap_err();
            assert_eq!(err, SpecError::UnsupportedFamily(name.into()));
            assert!(err.to_string().contains("unsupported family"));
        }
        let json = r#"{"G":1,"Q":0,"R":0,"L":1,"nu":[[1]],"phi":[[]],"kappa":[[]],"family":["beta"],"psi":[[1]]}"#;
        let err = serde_json::from_str::<MparSpec>(json).unwrap_err();
        assert!(err.to_string().contains("unsupported family"));
    }

    #[test]
    fn valid_spec_passes_through() {
        let mut spec = bivariate(52);
        spec.phi[3][0][1][0] = 0.0;
        let out = spec.clone().validate().unwrap();
        assert_eq!(out, spec);
    }

    #[test]
    fn negative_parameter_rejected() {
        let mut spec = bivariate(4);
        spec.phi[2][0][0][1] = -0.1;
        let err = spec.validate().unwrap_err();
        assert!(err.to_string().contains("negative parameter"), "{err}");
    }

    #[test]
    fn negative_allowed_for_real_line_families() {
        let mut spec = bivariate(4);
        spec.family = vec![ResponseFamily::Gaussian, ResponseFamily::Laplace];
        spec.phi[2][0][0][1] = -0.1;
        spec.nu[0][0] = -3.0;
        assert!(spec.validate().is_ok());
    }

    #[test]
    fn short_nu_is_dimension_mismatch() {
        let mut spec = bivariate(52);
        spec.nu.pop();
        let err = spec.validate().unwrap_err();
        assert!(err.to_string().contains("dimension mismatch"), "{err}");
    }

    #[test]
    fn ragged_phi_is_dimension_mismatch() {
        let mut spec = bivariate(3);
        spec.phi[1][0][1].push(0.0);
        assert!(matches!(spec.validate(), Err(SpecError::DimensionMismatch(_))));
    }

    #[test]
    fn missing_psi_reports_location() {
        let mut spec = bivariate(3);
        spec.psi[2][1] = None;
        assert_eq!(
            spec.validate().unwrap_err(),
            SpecError::MissingDispersion { family: "negbin".into(), unit: 1, phase: 2 }
        );
    }

    #[test]
    fn iid_spec_is_valid() {
        let spec = MparSpec {
            units: 1,
            obs_lags: 0,
            mean_lags: 0,
            period: 2,
            nu: vec![vec![1.0], vec![3.0]],
            phi: vec![Vec::new(); 2],
            kappa: vec![Vec::new(); 2],
            family: vec![ResponseFamily::Poisson],
            psi: vec![vec![None]; 2],
        };
        assert!(spec.validate().is_ok());
    }

    #[test]
    fn json_round_trip() {
        let spec = bivariate(2);
        let text = spec.to_json();
        assert!(text.contains("\"G\": 2"));
        let back: MparSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn phase_wraps() {
        let spec = bivariate(4);
        assert_eq!(spec.phase(-1), 3);
        assert_eq!(spec.phase(4), 0);
        assert_eq!(spec.phase(-9), 3);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn family() -> impl Strategy<Value = ResponseFamily> {
            prop::sample::select(ResponseFamily::ALL.to_vec())
        }

        proptest! {
            #[test]
            fn variance_non_negative(f in family(), lambda in 0.0f64..1e6, psi in 1e-3f64..1e3) {
                let lambda = if f.non_negative_support() { lambda } else { lambda - 5e5 };
                prop_assert!(conditional_variance(f, lambda, Some(psi)).unwrap() >= 0.0);
            }

            #[test]
            fn negbin_overdispersed(lambda in 1e-6f64..1e6, psi in 1e-3f64..1e6) {
                prop_assert!(conditional_variance(ResponseFamily::NegBin, lambda, Some(psi)).unwrap() > lambda);
            }

            #[test]
            fn coefficients_are_pure(f in family(), psi in 1e-3f64..1e3) {
                prop_assert_eq!(variance_coefficients(f, Some(psi)), variance_coefficients(f, Some(psi)));
            }
        }
    }
}
