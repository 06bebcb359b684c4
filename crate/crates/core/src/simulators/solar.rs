//! Solar dynamo: a scalar recursion with a multiplicative gain drawn from
//! `U(theta1, theta1 + theta2)` and additive noise from `U(0, theta3)`.

use super::{check_theta, Prior, PriorComponent, SimOutput, Simulator};
use crate::error::{Error, Result};
use crate::numeric::special::erf;
use crate::numeric::Rng;

pub const DEFAULT_LENGTH: usize = 100;
const Y0: f64 = 1.0;
const B1: f64 = 0.6;
const W1: f64 = 0.2;
const B2: f64 = 1.0;
const W2: f64 = 0.8;

/// Window `0.5 (1 + erf((y - b1) / w1)) (1 - erf((y - b2) / w2))`.
pub fn solar_gain(y: f64) -> f64 {
    0.5 * (1.0 + erf((y - B1) / W1)) * (1.0 - erf((y - B2) / W2))
}

#[derive(Debug, Clone)]
pub struct SolarDynamo {
    prior: Prior,
    length: usize,
    y0: f64,
}

impl SolarDynamo {
    pub fn new(length: usize) -> Result<Self> {
        if length == 0 {
            return Err(Error::InvalidParameter("solar dynamo length must be positive".into()));
        }
        let prior = Prior::new(vec![
            PriorComponent::Uniform { low: 0.9, high: 1.4 },
            PriorComponent::Uniform { low: 0.05, high: 0.25 },
            PriorComponent::Uniform { low: 0.02, high: 0.15 },
        ])?;
        Ok(Self { prior, length, y0: Y0 })
    }

    /// Same model started from a different initial value.
    pub fn with_initial(mut self, y0: f64) -> Self {
        self.y0 = y0;
        self
    }
}

impl Simulator for SolarDynamo {
    fn id(&self) -> &'static str {
        "solar_dynamo"
    }

    fn prior(&self) -> &Prior {
        &self.prior
    }

    fn obs_dim(&self) -> usize {
        self.length
    }

    /// `theta3 = 0` switches the additive noise off.
    fn simulate(&self, theta: &[f64], rng: &mut Rng) -> Result<SimOutput> {
        check_theta(self.id(), theta, 3)?;
        if theta[1] < 0.0 || theta[2] < 0.0 {
            return Err(Error::Simulator {
                model: self.id().into(),
                reason: format!("noise widths must be non-negative, got {theta:?}"),
            });
        }
        let mut y = Vec::with_capacity(self.length);
        let mut prev = self.y0;
        for _ in 0..self.length {
            let alpha = theta[0] + theta[1] * rng.uniform();
            let eps = theta[2] * rng.uniform();
            prev = alpha * solar_gain(prev) * prev + eps;
            y.push(prev);
        }
        Ok(SimOutput::plain(y))
    }
}
