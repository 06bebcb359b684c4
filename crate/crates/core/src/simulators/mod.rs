//! Benchmark simulators with their priors and, where available, exact
//! likelihoods.

mod glm;
mod mixtures;
mod ode;
mod ou;
mod population;
mod prior;
mod slcp;
mod solar;

use serde::{Deserialize, Serialize};

pub use glm::BetaGlm;
pub use mixtures::{hyperboloid_location, Gmm, Hyperboloid};
pub use ode::{dopri_integrate, OdeConfig, OdeSolution};
pub use ou::{ou_log_likelihood_var, Ou};
pub use population::{LotkaVolterra, Sir};
pub use prior::{Prior, PriorComponent};
pub use slcp::Slcp;
pub use solar::{solar_gain, SolarDynamo};

use crate::error::{Error, Result};
use crate::numeric::Rng;

/// Registered simulator ids.
pub const SIMULATOR_IDS: [&str; 8] = ["slcp", "ou", "lv", "sir", "beta_glm", "gmm", "hyperboloid", "solar_dynamo"];

/// One simulated observation with bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub y: Vec<f64>,
    /// Accepted ODE steps, for ODE-backed models.
    pub solver_steps: Option<usize>,
}

impl SimOutput {
    fn plain(y: Vec<f64>) -> Self {
        Self { y, solver_steps: None }
    }
}

pub trait Simulator: Send + Sync {
    fn id(&self) -> &'static str;

    fn prior(&self) -> &Prior;

    fn theta_dim(&self) -> usize {
        self.prior().dim()
    }

    fn obs_dim(&self) -> usize;

    fn simulate(&self, theta: &[f64], rng: &mut Rng) -> Result<SimOutput>;

    /// Whether [`Simulator::log_likelihood`] is available.
    fn has_likelihood(&self) -> bool {
        false
    }

    /// Exact `log p(y | theta)`.
    fn log_likelihood(&self, _y: &[f64], _theta: &[f64]) -> Result<f64> {
        Err(Error::Unsupported(self.id().to_string()))
    }
}

fn check_theta(model: &str, theta: &[f64], dim: usize) -> Result<()> {
    if theta.len() != dim {
        return Err(Error::Simulator {
            model: model.into(),
            reason: format!("expected {dim} parameters, got {}", theta.len()),
        });
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Simulator {
            model: model.into(),
            reason: format!("non-finite parameters {theta:?}"),
        });
    }
    Ok(())
}

fn check_obs(model: &str, y: &[f64], dim: usize) -> Result<()> {
    if y.len() != dim {
        return Err(Error::shape("log_likelihood", format!("{model}: observation has {} values, expected {dim}", y.len())));
    }
    Ok(())
}

/// Simulator selection and per-model options. Options that do not apply to
/// the chosen model are rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatorConfig {
    pub id: String,
    /// Series length for `ou` and `solar_dynamo`; points per species for `lv`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<usize>,
    /// Observation dimension for `hyperboloid` and `beta_glm`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obs_dim: Option<usize>,
    /// Number of regression coefficients for `beta_glm`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_params: Option<usize>,
    /// Seed of the fixed `beta_glm` design matrix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design_seed: Option<u64>,
    /// Beta concentration for `beta_glm`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concentration: Option<f64>,
    /// Solver settings for `lv` and `sir`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ode: Option<OdeConfig>,
}

impl SimulatorConfig {
    pub fn new(id: &str) -> Self {
        Self {
            id: id.to_string(),
            ..Self::default()
        }
    }

    fn reject_unused(&self, allowed: &[&str]) -> Result<()> {
        let set = [
            ("length", self.length.is_some()),
            ("obs_dim", self.obs_dim.is_some()),
            ("n_params", self.n_params.is_some()),
            ("design_seed", self.design_seed.is_some()),
            ("concentration", self.concentration.is_some()),
            ("ode", self.ode.is_some()),
        ];
        for (name, present) in set {
            if present && !allowed.contains(&name) {
                return Err(Error::Config(format!("option `{name}` does not apply to simulator `{}`", self.id)));
            }
        }
        Ok(())
    }
}

/// Construct a simulator from its registry id and options.
pub fn build_simulator(cfg: &SimulatorConfig) -> Result<Box<dyn Simulator>> {
    let ode = cfg.ode.unwrap_or_default();
    let sim: Box<dyn Simulator> = match cfg.id.as_str() {
        "slcp" => {
            cfg.reject_unused(&[])?;
            Box::new(Slcp::new())
        }
        "ou" => {
            cfg.reject_unused(&["length"])?;
            Box::new(Ou::new(cfg.length.unwrap_or(ou::DEFAULT_LENGTH))?)
        }
        "lv" => {
            cfg.reject_unused(&["length", "ode"])?;
            Box::new(LotkaVolterra::new(cfg.length.unwrap_or(population::LV_DEFAULT_POINTS), ode)?)
        }
        "sir" => {
            cfg.reject_unused(&["ode"])?;
            Box::new(Sir::new(ode)?)
        }
        "beta_glm" => {
            cfg.reject_unused(&["obs_dim", "n_params", "design_seed", "concentration"])?;
            Box::new(BetaGlm::new(
                cfg.obs_dim.unwrap_or(glm::DEFAULT_OBS),
                cfg.n_params.unwrap_or(glm::DEFAULT_PARAMS),
                cfg.design_seed.unwrap_or(glm::DEFAULT_DESIGN_SEED),
                cfg.concentration.unwrap_or(glm::DEFAULT_CONCENTRATION),
            )?)
        }
        "gmm" => {
            cfg.reject_unused(&[])?;
            Box::new(Gmm::new())
        }
        "hyperboloid" => {
            cfg.reject_unused(&["obs_dim"])?;
            Box::new(Hyperboloid::new(cfg.obs_dim.unwrap_or(mixtures::DEFAULT_HYPERBOLOID_DIM))?)
        }
        "solar_dynamo" => {
            cfg.reject_unused(&["length"])?;
            Box::new(SolarDynamo::new(cfg.length.unwrap_or(solar::DEFAULT_LENGTH))?)
        }
        other => {
            return Err(Error::UnknownSimulator {
                name: other.to_string(),
                available: SIMULATOR_IDS.join(", "),
            })
        }
    };
    Ok(sim)
}
