//! Endemic-epidemic model for multivariate surveillance counts with
//! geometrically distributed lags:
//!
//! ```text
//! Y_gt ~ NegBin(lambda_gt, psi_g)
//! lambda_gt = nu_gt + sum_g' phi_g'gt sum_q w_q Y_g',t-q
//! ```
//!
//! with log-linear periodic predictors for `nu` and `phi`.

mod design;
mod fit;
mod likelihood;
mod optim;
mod series;

pub use design::{build_predictors, lag_weights, Component, Design, HhhConfig, Predictor, Term};
pub use fit::{fit, parameter_curves, to_mpar, CurvePoint, FitOptions, HhhFit, ParameterCurves, ProfilePoint};
pub use likelihood::{
    conditional_means, lagged_sums, log_likelihood, log_likelihood_gradient, negbin_log_density,
    observed_information,
};
pub use series::SurveillanceSeries;
