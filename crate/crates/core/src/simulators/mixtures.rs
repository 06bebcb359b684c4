//! Two-component mixture models: a Gaussian scale mixture with a shared
//! location, and a Student-t mixture whose locations are hyperbolic
//! functions of the parameters.

use rand_distr::ChiSquared;

use super::{check_obs, check_theta, Prior, SimOutput, Simulator};
use crate::error::{Error, Result};
use crate::numeric::special::{ln_gamma, logsumexp, normal_log_pdf};
use crate::numeric::Rng;

const GMM_NARROW_VAR: f64 = 0.01;

pub const DEFAULT_HYPERBOLOID_DIM: usize = 2;
const T_DOF: f64 = 3.0;
const T_SCALE_VAR: f64 = 0.01;
const ANCHORS_A: [[f64; 2]; 2] = [[-0.5, 0.0], [0.5, 0.0]];
const ANCHORS_B: [[f64; 2]; 2] = [[0.0, -0.5], [0.0, 0.5]];

/// Equal-weight mixture of `N(theta, I)` and `N(theta, 0.01 I)` in 2-D.
#[derive(Debug, Clone)]
pub struct Gmm {
    prior: Prior,
}

impl Default for Gmm {
    fn default() -> Self {
        Self::new()
    }
}

impl Gmm {
    pub fn new() -> Self {
        Self {
            prior: Prior::uniform_box(-10.0, 10.0, 2).expect("valid prior"),
        }
    }
}

impl Simulator for Gmm {
    fn id(&self) -> &'static str {
        "gmm"
    }

    fn prior(&self) -> &Prior {
        &self.prior
    }

    fn obs_dim(&self) -> usize {
        2
    }

    fn simulate(&self, theta: &[f64], rng: &mut Rng) -> Result<SimOutput> {
        check_theta(self.id(), theta, 2)?;
        let sd = if rng.uniform() < 0.5 { 1.0 } else { GMM_NARROW_VAR.sqrt() };
        Ok(SimOutput::plain(theta.iter().map(|t| t + sd * rng.normal()).collect()))
    }

    fn has_likelihood(&self) -> bool {
        true
    }

    fn log_likelihood(&self, y: &[f64], theta: &[f64]) -> Result<f64> {
        check_theta(self.id(), theta, 2)?;
        check_obs(self.id(), y, 2)?;
        let comp = |sd: f64| -> f64 { 0.5f64.ln() + y.iter().zip(theta).map(|(a, m)| normal_log_pdf(*a, *m, sd)).sum::<f64>() };
        Ok(logsumexp(&[comp(1.0), comp(GMM_NARROW_VAR.sqrt())]))
    }
}

fn dist(a: &[f64], b: &[f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// `||theta - x1|| - ||theta - x2||` for an anchor pair.
pub fn hyperboloid_location(theta: &[f64], anchors: &[[f64; 2]; 2]) -> f64 {
    dist(theta, &anchors[0]) - dist(theta, &anchors[1])
}

/// Equal-weight mixture of multivariate Student-t distributions centred at
/// `F(theta; a) 1` and `F(theta; b) 1`.
#[derive(Debug, Clone)]
pub struct Hyperboloid {
    prior: Prior,
    dim: usize,
}

impl Hyperboloid {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("hyperboloid observation dim must be positive".into()));
        }
        Ok(Self {
            prior: Prior::uniform_box(-2.0, 2.0, 2)?,
            dim,
        })
    }

    pub fn locations(theta: &[f64]) -> [f64; 2] {
        [hyperboloid_location(theta, &ANCHORS_A), hyperboloid_location(theta, &ANCHORS_B)]
    }

    fn t_log_pdf(&self, y: &[f64], loc: f64) -> f64 {
        let d = self.dim as f64;
        let q: f64 = y.iter().map(|v| (v - loc).powi(2)).sum::<f64>() / T_SCALE_VAR;
        ln_gamma(0.5 * (T_DOF + d)) - ln_gamma(0.5 * T_DOF) - 0.5 * d * (T_DOF * std::f64::consts::PI).ln()
            - 0.5 * d * T_SCALE_VAR.ln()
            - 0.5 * (T_DOF + d) * (q / T_DOF).ln_1p()
    }
}

impl Simulator for Hyperboloid {
    fn id(&self) -> &'static str {
        "hyperboloid"
    }

    fn prior(&self) -> &Prior {
        &self.prior
    }

    fn obs_dim(&self) -> usize {
        self.dim
    }

    fn simulate(&self, theta: &[f64], rng: &mut Rng) -> Result<SimOutput> {
        check_theta(self.id(), theta, 2)?;
        let locs = Self::locations(theta);
        let loc = if rng.uniform() < 0.5 { locs[0] } else { locs[1] };
        let chi = ChiSquared::new(T_DOF).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let w: f64 = rng.sample(&chi);
        let scale = T_SCALE_VAR.sqrt() / (w / T_DOF).sqrt();
        Ok(SimOutput::plain((0..self.dim).map(|_| loc + scale * rng.normal()).collect()))
    }

    fn has_likelihood(&self) -> bool {
        true
    }

    fn log_likelihood(&self, y: &[f64], theta: &[f64]) -> Result<f64> {
        check_theta(self.id(), theta, 2)?;
        check_obs(self.id(), y, self.dim)?;
        let locs = Self::locations(theta);
        let half = 0.5f64.ln();
        Ok(logsumexp(&[half + self.t_log_pdf(y, locs[0]), half + self.t_log_pdf(y, locs[1])]))
    }
}
