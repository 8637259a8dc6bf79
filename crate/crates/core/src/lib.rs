//! Sales forecasting with an additive log2 model (piecewise-linear trend plus
//! Fourier seasonality) and transfer of fitted models between entities.

pub mod error;
pub mod evaluation;
pub mod fitting;
pub mod model;
pub mod pipeline;
pub mod ridge;
pub mod series;
pub mod synthetic;
pub mod transfer;

pub use error::{Error, Result};
