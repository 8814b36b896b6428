//! Multivariate periodic autoregressive (MPAR) models with linear
//! conditional means: specification, simulation, periodically stationary
//! moments, and fitting of the endemic-epidemic distributed-lag model for
//! surveillance counts.

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod hhh4;
pub mod io;
pub mod model;
pub mod moments;
pub mod par11;
pub mod simulate;

pub use error::Error;
pub use model::{MparSpec, ResponseFamily, VarianceCoefficients};
pub use moments::{PeriodicMoments, StackedMoments};
