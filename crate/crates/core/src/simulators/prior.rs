//! Factorized parameter priors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::special::normal_log_pdf;
use crate::numeric::Rng;
use crate::samplers::SupportTransform;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PriorComponent {
    Uniform { low: f64, high: f64 },
    LogNormal { mu: f64, sigma: f64 },
    Normal { mean: f64, sd: f64 },
}

impl PriorComponent {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            PriorComponent::Uniform { low, high } => low.is_finite() && high.is_finite() && low < high,
            PriorComponent::LogNormal { mu, sigma } => mu.is_finite() && sigma.is_finite() && sigma > 0.0,
            PriorComponent::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid prior component {self:?}")))
        }
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        match *self {
            PriorComponent::Uniform { low, high } => {
                if x >= low && x <= high {
                    -(high - low).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            PriorComponent::LogNormal { mu, sigma } => {
                if x > 0.0 {
                    normal_log_pdf(x.ln(), mu, sigma) - x.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            PriorComponent::Normal { mean, sd } => normal_log_pdf(x, mean, sd),
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        match *self {
            PriorComponent::Uniform { low, high } => low + (high - low) * rng.uniform_open(),
            PriorComponent::LogNormal { mu, sigma } => (mu + sigma * rng.normal()).exp(),
            PriorComponent::Normal { mean, sd } => mean + sd * rng.normal(),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            PriorComponent::Uniform { low, high } => 0.5 * (low + high),
            PriorComponent::LogNormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
            PriorComponent::Normal { mean, .. } => mean,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            PriorComponent::Uniform { low, high } => (high - low).powi(2) / 12.0,
            PriorComponent::LogNormal { mu, sigma } => {
                let s2 = sigma * sigma;
                (s2.exp() - 1.0) * (2.0 * mu + s2).exp()
            }
            PriorComponent::Normal { sd, .. } => sd * sd,
        }
    }

    pub fn transform(&self) -> SupportTransform {
        match *self {
            PriorComponent::Uniform { low, high } => SupportTransform::LogitBox { low, high },
            PriorComponent::LogNormal { .. } => SupportTransform::Log,
            PriorComponent::Normal { .. } => SupportTransform::Identity,
        }
    }

    /// Standard deviation of the prior pushed into the unconstrained space
    /// of [`PriorComponent::transform`]; a uniform becomes a standard
    /// logistic.
    pub fn unconstrained_sd(&self) -> f64 {
        match *self {
            PriorComponent::Uniform { .. } => std::f64::consts::PI / 3f64.sqrt(),
            PriorComponent::LogNormal { sigma, .. } => sigma,
            PriorComponent::Normal { sd, .. } => sd,
        }
    }
}

/// Independent per-coordinate prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    components: Vec<PriorComponent>,
}

impl Prior {
    pub fn new(components: Vec<PriorComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidParameter("prior needs at least one coordinate".into()));
        }
        for c in &components {
            c.validate()?;
        }
        Ok(Self { components })
    }

    pub fn uniform_box(low: f64, high: f64, dim: usize) -> Result<Self> {
        Self::new(vec![PriorComponent::Uniform { low, high }; dim])
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[PriorComponent] {
        &self.components
    }

    /// Joint log-density; `-inf` outside the support.
    pub fn log_pdf(&self, theta: &[f64]) -> f64 {
        if theta.len() != self.dim() {
            return f64::NEG_INFINITY;
        }
        let mut lp = 0.0;
        for (c, &x) in self.components.iter().zip(theta) {
            lp += c.log_pdf(x);
            if lp == f64::NEG_INFINITY {
                break;
            }
        }
        lp
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        self.log_pdf(theta) > f64::NEG_INFINITY
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        self.components.iter().map(|c| c.sample(rng)).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        self.components.iter().map(PriorComponent::mean).collect()
    }

    pub fn transforms(&self) -> Vec<SupportTransform> {
        self.components.iter().map(PriorComponent::transform).collect()
    }

    /// Initial slice widths: prior standard deviation in unconstrained space.
    pub fn slice_widths(&self) -> Vec<f64> {
        self.components.iter().map(PriorComponent::unconstrained_sd).collect()
    }
}
