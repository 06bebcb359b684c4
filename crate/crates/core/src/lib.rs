//! Surjective sequential neural likelihood estimation.

pub mod error;
pub mod flows;
pub mod metrics;
pub mod nets;
pub mod numeric;
pub mod samplers;
pub mod sequential;
pub mod simulators;
pub mod training;

pub use error::{Error, Result};
