//! Bijections from constrained parameter supports onto the real line.

use serde::{Deserialize, Serialize};

use crate::numeric::special::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SupportTransform {
    /// Unbounded coordinate.
    Identity,
    /// Positive coordinate, `theta = exp(u)`.
    Log,
    /// Box `[low, high]`, `theta = low + (high - low) * sigmoid(u)`.
    LogitBox { low: f64, high: f64 },
}

impl SupportTransform {
    /// Unconstrained value for `theta`.
    pub fn to_unconstrained(&self, theta: f64) -> f64 {
        match *self {
            SupportTransform::Identity => theta,
            SupportTransform::Log => theta.ln(),
            SupportTransform::LogitBox { low, high } => {
                let p = (theta - low) / (high - low);
                p.ln() - (-p).ln_1p()
            }
        }
    }

    pub fn to_constrained(&self, u: f64) -> f64 {
        match *self {
            SupportTransform::Identity => u,
            SupportTransform::Log => u.exp(),
            SupportTransform::LogitBox { low, high } => {
                let v = low + (high - low) * sigmoid(u);
                v.clamp(low, high)
            }
        }
    }

    /// `ln |d theta / d u|` at `u`.
    pub fn log_jacobian(&self, u: f64) -> f64 {
        match *self {
            SupportTransform::Identity => 0.0,
            SupportTransform::Log => u,
            SupportTransform::LogitBox { low, high } => {
                // ln sigmoid(u) + ln sigmoid(-u), written to avoid overflow
                (high - low).ln() - u.abs() - 2.0 * (-u.abs()).exp().ln_1p()
            }
        }
    }

    /// Whether `theta` lies in the support.
    pub fn contains(&self, theta: f64) -> bool {
        match *self {
            SupportTransform::Identity => theta.is_finite(),
            SupportTransform::Log => theta > 0.0 && theta.is_finite(),
            SupportTransform::LogitBox { low, high } => theta >= low && theta <= high,
        }
    }
}
