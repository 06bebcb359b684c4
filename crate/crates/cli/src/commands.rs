//! The `simulate`, `reference` and `evaluate` subcommands.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use ssnl_core::metrics::{h_divergences, mse_to_truth, DivergenceConfig, HDivergenceResult};
use ssnl_core::numeric::{Rng, Tensor};
use ssnl_core::samplers::{read_samples_csv, split_rhat, PosteriorSummary};
use ssnl_core::simulators::{build_simulator, Simulator};
use ssnl_core::training::Dataset;
use ssnl_core::{Error, Result};

use crate::config::ExperimentConfig;
use crate::files::{inventory, write_json, FileEntry, MANIFEST_VERSION};
use crate::observe::{exact_posterior, observation, simulate_with_retries, STREAM_METRICS, STREAM_SIMULATE};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateManifest {
    pub manifest_version: u32,
    pub code_version: String,
    pub command: String,
    pub config_hash: String,
    pub simulator: String,
    pub seed: u64,
    pub n: usize,
    pub files: Vec<FileEntry>,
}

/// Writes `n` prior-predictive pairs to `<out>/dataset.csv` plus a manifest.
/// Pair `i` uses its own stream, so the file does not depend on threading.
pub fn simulate(cfg: &ExperimentConfig, n: usize, seed: u64, out: &Path) -> Result<SimulateManifest> {
    let sim = build_simulator(&cfg.simulator)?;
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| simulate_with_retries(sim.as_ref(), &mut Rng::stream(seed, &[STREAM_SIMULATE, i as u64]), i))
        .collect::<Result<_>>()?;
    let mut data = Dataset::new(sim.obs_dim(), sim.theta_dim());
    for (theta, y) in &pairs {
        data.push(y, theta)?;
    }
    std::fs::create_dir_all(out)?;
    data.write_csv(&out.join("dataset.csv"))?;
    let manifest = SimulateManifest {
        manifest_version: MANIFEST_VERSION,
        code_version: CODE_VERSION.into(),
        command: "simulate".into(),
        config_hash: cfg.hash(),
        simulator: sim.id().into(),
        seed,
        n,
        files: inventory(out, &["manifest.json"])?,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceRecord {
    pub manifest_version: u32,
    pub code_version: String,
    pub config_hash: String,
    pub simulator: String,
    pub seed: u64,
    pub theta_obs: Vec<f64>,
    pub y_obs: Vec<f64>,
    /// Split R-hat per parameter.
    pub rhat: Vec<f64>,
    pub posterior: PosteriorSummary,
    pub files: Vec<FileEntry>,
}

pub fn reference_dir(out: &Path, seed: u64) -> PathBuf {
    out.join("reference").join(format!("seed-{seed}"))
}

/// Samples the exact posterior for the seed's observation and writes
/// `posterior.csv` and `reference.json` under `reference/seed-<seed>/`.
pub fn reference_one(
    cfg: &ExperimentConfig,
    sim: &dyn Simulator,
    seed: u64,
    out: &Path,
) -> Result<(ReferenceRecord, Tensor)> {
    if !sim.has_likelihood() {
        return Err(Error::Unsupported(sim.id().to_string()));
    }
    let (theta_obs, y_obs) = observation(sim, seed)?;
    let chains = exact_posterior(sim, &y_obs, &cfg.reference, seed)?;
    let rhat = if chains.n_chains() >= 2 {
        split_rhat(&chains)?
    } else {
        Vec::new()
    };
    let dir = reference_dir(out, seed);
    std::fs::create_dir_all(&dir)?;
    chains.write_csv(&dir.join("posterior.csv"))?;
    let record = ReferenceRecord {
        manifest_version: MANIFEST_VERSION,
        code_version: CODE_VERSION.into(),
        config_hash: cfg.hash(),
        simulator: sim.id().into(),
        seed,
        theta_obs,
        y_obs,
        rhat,
        posterior: chains.summary(),
        files: inventory(&dir, &["reference.json"])?,
    };
    write_json(&dir.join("reference.json"), &record)?;
    Ok((record, chains.pooled()))
}

/// Reference posteriors for every seed (in parallel).
pub fn reference(cfg: &ExperimentConfig, seeds: &[u64], out: &Path) -> Result<Vec<ReferenceRecord>> {
    let sim = build_simulator(&cfg.simulator)?;
    if !sim.has_likelihood() {
        return Err(Error::Unsupported(sim.id().to_string()));
    }
    seeds
        .par_iter()
        .map(|&s| reference_one(cfg, sim.as_ref(), s, out).map(|(r, _)| r))
        .collect()
}

/// What `evaluate` compares the posterior sample against.
#[derive(Debug, Clone)]
pub enum Comparison {
    Samples(PathBuf),
    Truth(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluateReport {
    pub n_posterior: usize,
    pub dim: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_other: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub divergences: Option<HDivergenceResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse: Option<f64>,
}

/// H-divergences between two sample files, or the MSE of one against a
/// known parameter. Sets larger than `n_draws` are subsampled.
pub fn evaluate(
    posterior: &Path,
    against: &Comparison,
    divergence: &DivergenceConfig,
    n_draws: usize,
    seed: u64,
) -> Result<EvaluateReport> {
    let p = read_samples_csv(posterior)?;
    let (n, d) = p.dims2("evaluate")?;
    match against {
        Comparison::Truth(theta) => {
            if theta.len() != d {
                return Err(Error::Shape {
                    op: "evaluate",
                    detail: format!("{} has {d} parameters, theta_obs has {}", posterior.display(), theta.len()),
                });
            }
            Ok(EvaluateReport {
                n_posterior: n,
                dim: d,
                n_other: None,
                divergences: None,
                mse: Some(mse_to_truth(&p, theta)?),
            })
        }
        Comparison::Samples(other) => {
            let q = read_samples_csv(other)?;
            let (m, dq) = q.dims2("evaluate")?;
            if dq != d {
                return Err(Error::Shape {
                    op: "evaluate",
                    detail: format!("{} has {d} parameters, {} has {dq}", posterior.display(), other.display()),
                });
            }
            let ps = subsample(&p, n_draws, &mut Rng::stream(seed, &[STREAM_METRICS, 0]))?;
            let qs = subsample(&q, n_draws, &mut Rng::stream(seed, &[STREAM_METRICS, 0]))?;
            let div = h_divergences(&ps, &qs, divergence, &mut Rng::stream(seed, &[STREAM_METRICS, 1]))?;
            Ok(EvaluateReport {
                n_posterior: n,
                dim: d,
                n_other: Some(m),
                divergences: Some(div),
                mse: None,
            })
        }
    }
}

/// At most `n` rows drawn without replacement, in their original order.
pub fn subsample(x: &Tensor, n: usize, rng: &mut Rng) -> Result<Tensor> {
    let rows = x.shape()[0];
    if rows <= n {
        return Ok(x.clone());
    }
    let mut idx = rng.permutation(rows)[..n].to_vec();
    idx.sort_unstable();
    x.gather_rows(&idx)
}
