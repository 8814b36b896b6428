//! Error types, one enum per subsystem plus a wrapper that records the origin.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("negative parameter {name} = {value} is not allowed for a non-negative support family")]
    NegativeParameter { name: String, value: f64 },
    #[error("non-finite parameter {0}")]
    NonFinite(String),
    #[error("missing dispersion parameter psi for {family} (unit {unit}, phase {phase})")]
    MissingDispersion { family: String, unit: usize, phase: usize },
    #[error("invalid dispersion parameter psi = {value} for {family}: must be > 0")]
    InvalidDispersion { family: String, value: f64 },
    #[error("unsupported family `{0}`")]
    UnsupportedFamily(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MomentsError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("operation requires {0}")]
    Precondition(String),
    #[error("process is not periodically stationary in the mean (spectral radius {radius:.6})")]
    NotMeanStationary { radius: f64 },
    #[error("process is second-order non-stationary (spectral radius {radius:.6})")]
    NotSecondOrderStationary { radius: f64 },
    #[error("second-order non-stationary: moment recursion diverged after {iterations} sweeps (max |M| = {magnitude:e})")]
    Diverged { iterations: usize, magnitude: f64 },
    #[error("moment recursion did not converge within {iterations} sweeps (last change {change:e})")]
    NotConverged { iterations: usize, change: f64 },
    #[error("singular linear system: {0}")]
    Singular(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimulationError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("conditional mean {lambda} of unit {unit} at step {step} is outside the support of {family}")]
    OutOfSupport { lambda: f64, unit: usize, step: usize, family: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("need at least 2 replicates per phase, got {0}")]
    TooFewReplicates(usize),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("lag decay p = {0} outside (0, 1]")]
    InvalidDecay(f64),
    #[error("overflow in linear predictor")]
    Overflow,
    #[error("optimizer did not converge: {0}")]
    NotConverged(String),
    #[error("covariance matrix is not positive semi-definite")]
    NotPsd,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagnosticsError {
    #[error("non-positive fitted mean {0}")]
    NonPositiveMean(f64),
    #[error("zero-variance input series")]
    ZeroVariance,
    #[error("series of length {len} too short for lag {d_max}")]
    TooShort { len: usize, d_max: usize },
    #[error("variance {sigma2} below mean {mu}: underdispersion cannot be represented by a negative binomial")]
    Underdispersed { mu: f64, sigma2: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Moments(#[from] MomentsError),
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
}

/// Top-level error carrying the subsystem it came from.
#[derive(Debug, Error)]
pub enum Error {
    #[error("spec: {0}")]
    Spec(#[from] SpecError),
    #[error("moments: {0}")]
    Moments(#[from] MomentsError),
    #[error("simulate: {0}")]
    Simulation(#[from] SimulationError),
    #[error("fit: {0}")]
    Fit(#[from] FitError),
    #[error("diagnostics: {0}")]
    Diagnostics(#[from] DiagnosticsError),
    #[error("io: {0}")]
    Io(#[from] IoError),
}

impl Error {
    pub fn origin(&self) -> &'static str {
        match self {
            Error::Spec(_) => "spec",
            Error::Moments(_) => "moments",
            Error::Simulation(_) => "simulate",
            Error::Fit(_) => "fit",
            Error::Diagnostics(_) => "diagnostics",
            Error::Io(_) => "io",
        }
    }
}
