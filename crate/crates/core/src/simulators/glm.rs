//! Beta regression with a logistic link in the mean-concentration
//! parameterization, over a fixed Gaussian design matrix.

use rand_distr::Beta;

use super::{check_obs, check_theta, Prior, PriorComponent, SimOutput, Simulator};
use crate::error::{Error, Result};
use crate::numeric::special::{ln_gamma, sigmoid};
use crate::numeric::Rng;

pub const DEFAULT_OBS: usize = 100;
pub const DEFAULT_PARAMS: usize = 10;
pub const DEFAULT_DESIGN_SEED: u64 = 20_240_101;
pub const DEFAULT_CONCENTRATION: f64 = 10.0;

const MEAN_CLAMP: f64 = 1e-9;
/// Draws are kept this far inside (0, 1) so their log-density stays finite.
const OBS_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct BetaGlm {
    prior: Prior,
    n_obs: usize,
    n_params: usize,
    concentration: f64,
    design_seed: u64,
    /// Row-major `[n_obs, n_params]`.
    design: Vec<f64>,
}

impl BetaGlm {
    pub fn new(n_obs: usize, n_params: usize, design_seed: u64, concentration: f64) -> Result<Self> {
        if n_obs == 0 || n_params == 0 {
            return Err(Error::InvalidParameter("Beta GLM needs positive dimensions".into()));
        }
        if !(concentration > 0.0 && concentration.is_finite()) {
            return Err(Error::InvalidParameter(format!("concentration must be positive, got {concentration}")));
        }
        let mut rng = Rng::new(design_seed);
        let design = (0..n_obs * n_params).map(|_| rng.normal()).collect();
        let prior = Prior::new(vec![PriorComponent::Normal { mean: 0.0, sd: 1.0 }; n_params])?;
        Ok(Self {
            prior,
            n_obs,
            n_params,
            concentration,
            design_seed,
            design,
        })
    }

    pub fn design(&self) -> &[f64] {
        &self.design
    }

    pub fn design_seed(&self) -> u64 {
        self.design_seed
    }

    pub fn concentration(&self) -> f64 {
        self.concentration
    }

    /// Clamped per-observation means `sigmoid(X theta)`.
    pub fn means(&self, theta: &[f64]) -> Vec<f64> {
        self.design
            .chunks(self.n_params)
            .map(|row| {
                let eta: f64 = row.iter().zip(theta).map(|(x, t)| x * t).sum();
                sigmoid(eta).clamp(MEAN_CLAMP, 1.0 - MEAN_CLAMP)
            })
            .collect()
    }
}

impl Simulator for BetaGlm {
    fn id(&self) -> &'static str {
        "beta_glm"
    }

    fn prior(&self) -> &Prior {
        &self.prior
    }

    fn obs_dim(&self) -> usize {
        self.n_obs
    }

    fn simulate(&self, theta: &[f64], rng: &mut Rng) -> Result<SimOutput> {
        check_theta(self.id(), theta, self.n_params)?;
        let c = self.concentration;
        let mut y = Vec::with_capacity(self.n_obs);
        for mu in self.means(theta) {
            let d = Beta::new(mu * c, (1.0 - mu) * c).map_err(|e| Error::Simulator {
                model: "beta_glm".into(),
                reason: e.to_string(),
            })?;
            let v: f64 = rng.sample(&d);
            y.push(v.clamp(OBS_CLAMP, 1.0 - OBS_CLAMP));
        }
        Ok(SimOutput::plain(y))
    }

    fn has_likelihood(&self) -> bool {
        true
    }

    fn log_likelihood(&self, y: &[f64], theta: &[f64]) -> Result<f64> {
        check_theta(self.id(), theta, self.n_params)?;
        check_obs(self.id(), y, self.n_obs)?;
        let c = self.concentration;
        let mut lp = 0.0;
        for (&yi, mu) in y.iter().zip(self.means(theta)) {
            if !(yi > 0.0 && yi < 1.0) {
                return Ok(f64::NEG_INFINITY);
            }
            let (a, b) = (mu * c, (1.0 - mu) * c);
            lp += ln_gamma(c) - ln_gamma(a) - ln_gamma(b) + (a - 1.0) * yi.ln() + (b - 1.0) * (-yi).ln_1p();
        }
        Ok(lp)
    }
}
