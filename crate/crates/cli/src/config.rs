//! Experiment configuration: one TOML file, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use ssnl_core::metrics::DivergenceConfig;
use ssnl_core::samplers::SliceConfig;
use ssnl_core::sequential::{Method, Reduction, SequentialConfig};
use ssnl_core::simulators::SimulatorConfig;
use ssnl_core::training::TrainConfig;
use ssnl_core::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub simulator: SimulatorConfig,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_sims_per_round")]
    pub sims_per_round: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Overridden by `--out`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub training: TrainConfig,
    /// Surrogate-posterior sampler used in every round.
    #[serde(default)]
    pub sampler: SliceConfig,
    /// Long-run sampler for exact reference posteriors.
    #[serde(default = "SliceConfig::reference")]
    pub reference: SliceConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Compare each round against an exact reference posterior when the
    /// model has a likelihood.
    pub divergences: bool,
    /// Draws taken from each posterior for a divergence estimate.
    pub n_draws: usize,
    pub divergence: DivergenceConfig,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            divergences: true,
            n_draws: 10_000,
            divergence: DivergenceConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    /// Pairs written by `simulate`; overridden by `--n`.
    pub n: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { n: 1000 }
    }
}

fn default_methods() -> Vec<Method> {
    vec![Method::Ssnl(Reduction::Fixed(0.75)), Method::Snl]
}

fn default_rounds() -> usize {
    15
}

fn default_sims_per_round() -> usize {
    1000
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("`methods` must list at least one method".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("`seeds` must list at least one seed".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for m in &self.methods {
            if !seen.insert(m.to_string()) {
                return Err(Error::Config(format!("method `{m}` listed twice")));
            }
        }
        if self.metrics.n_draws < ssnl_core::metrics::MIN_SAMPLES {
            return Err(Error::Config(format!(
                "metrics.n_draws must be at least {}",
                ssnl_core::metrics::MIN_SAMPLES
            )));
        }
        if self.simulate.n == 0 {
            return Err(Error::Config("simulate.n must be positive".into()));
        }
        self.sequential().validate().map_err(as_config)?;
        self.reference.validate().map_err(as_config)?;
        self.metrics.divergence.validate()?;
        // surface unknown ids and misplaced options now rather than per cell
        ssnl_core::simulators::build_simulator(&self.simulator)?;
        Ok(())
    }

    pub fn sequential(&self) -> SequentialConfig {
        SequentialConfig {
            rounds: self.rounds,
            sims_per_round: self.sims_per_round,
            training: self.training.clone(),
            sampler: self.sampler.clone(),
        }
    }

    /// SHA-256 of the effective configuration, output directory excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
