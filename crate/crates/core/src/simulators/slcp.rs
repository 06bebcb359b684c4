//! Simple likelihood, complex posterior: four iid bivariate Gaussian draws
//! whose mean and covariance are nonlinear in five parameters.

use super::{check_obs, check_theta, Prior, SimOutput, Simulator};
use crate::error::Result;
use crate::numeric::Rng;

const JITTER: f64 = 1e-6;
const N_DRAWS: usize = 4;

#[derive(Debug, Clone)]
pub struct Slcp {
    prior: Prior,
}

impl Default for Slcp {
    fn default() -> Self {
        Self::new()
    }
}

impl Slcp {
    pub fn new() -> Self {
        Self {
            prior: Prior::uniform_box(-3.0, 3.0, 5).expect("valid prior"),
        }
    }

    /// Mean and covariance `[s11, s12, s22]` for `theta`; a singular
    /// covariance gets a small diagonal jitter.
    pub fn moments(theta: &[f64]) -> ([f64; 2], [f64; 3]) {
        let mu = [theta[0], theta[1]];
        let phi1 = theta[2] * theta[2];
        let phi2 = theta[3] * theta[3];
        let rho = theta[4].tanh();
        let mut s = [phi1 * phi1, rho * phi1 * phi2, phi2 * phi2];
        let det = s[0] * s[2] - s[1] * s[1];
        if !(det > 0.0) {
            log::debug!("slcp: singular covariance at {theta:?}, adding jitter");
            s[0] += JITTER;
            s[2] += JITTER;
        }
        (mu, s)
    }
}

fn cholesky(s: &[f64; 3]) -> [f64; 3] {
    let l11 = s[0].sqrt();
    let l21 = s[1] / l11;
    let l22 = (s[2] - l21 * l21).max(0.0).sqrt();
    [l11, l21, l22]
}

impl Simulator for Slcp {
    fn id(&self) -> &'static str {
        "slcp"
    }

    fn prior(&self) -> &Prior {
        &self.prior
    }

    fn obs_dim(&self) -> usize {
        2 * N_DRAWS
    }

    fn simulate(&self, theta: &[f64], rng: &mut Rng) -> Result<SimOutput> {
        check_theta(self.id(), theta, 5)?;
        let (mu, s) = Self::moments(theta);
        let l = cholesky(&s);
        let mut y = Vec::with_capacity(2 * N_DRAWS);
        for _ in 0..N_DRAWS {
            let (z1, z2) = (rng.normal(), rng.normal());
            y.push(mu[0] + l[0] * z1);
            y.push(mu[1] + l[1] * z1 + l[2] * z2);
        }
        Ok(SimOutput::plain(y))
    }

    fn has_likelihood(&self) -> bool {
        true
    }

    fn log_likelihood(&self, y: &[f64], theta: &[f64]) -> Result<f64> {
        check_theta(self.id(), theta, 5)?;
        check_obs(self.id(), y, 2 * N_DRAWS)?;
        let (mu, s) = Self::moments(theta);
        let det = s[0] * s[2] - s[1] * s[1];
        let mut lp = 0.0;
        for pair in y.chunks(2) {
            let (a, b) = (pair[0] - mu[0], pair[1] - mu[1]);
            let q = (s[2] * a * a - 2.0 * s[1] * a * b + s[0] * b * b) / det;
            lp += -(2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln() - 0.5 * q;
        }
        Ok(lp)
    }
}
