//! Per-seed observations and exact reference posteriors.

use ssnl_core::numeric::Rng;
use ssnl_core::samplers::{slice_sample, ChainSet, SliceConfig, TargetDensity};
use ssnl_core::sequential::MAX_RETRIES;
use ssnl_core::simulators::Simulator;
use ssnl_core::{Error, Result};

/// Stream labels under a seed.
pub const STREAM_OBSERVATION: u64 = 0;
pub const STREAM_RUN: u64 = 1;
pub const STREAM_REFERENCE: u64 = 2;
pub const STREAM_METRICS: u64 = 3;
pub const STREAM_SIMULATE: u64 = 4;

/// `theta_obs ~ prior`, then `y_obs ~ sim(theta_obs)`; a failed simulation
/// redraws the parameter.
pub fn observation(sim: &dyn Simulator, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rng = Rng::stream(seed, &[STREAM_OBSERVATION]);
    simulate_with_retries(sim, &mut rng, 0)
}

/// One `(theta, y)` pair with `theta` from the prior.
pub fn simulate_with_retries(sim: &dyn Simulator, rng: &mut Rng, index: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut last = None;
    for _ in 0..=MAX_RETRIES {
        let theta = sim.prior().sample(rng);
        match sim.simulate(&theta, rng) {
            Ok(out) if out.y.iter().all(|v| v.is_finite()) => return Ok((theta, out.y)),
            Ok(_) => last = Some("non-finite output".to_string()),
            Err(e) => last = Some(e.to_string()),
        }
    }
    Err(Error::Simulator {
        model: sim.id().into(),
        reason: format!(
            "simulation {index} failed after {MAX_RETRIES} retries: {}",
            last.unwrap_or_default()
        ),
    })
}

/// Slice-sample `p(theta | y_obs)` using the model's exact likelihood.
pub fn exact_posterior(sim: &dyn Simulator, y_obs: &[f64], cfg: &SliceConfig, seed: u64) -> Result<ChainSet> {
    if !sim.has_likelihood() {
        return Err(Error::Unsupported(sim.id().to_string()));
    }
    let prior = sim.prior();
    let log_post = |theta: &[f64]| -> f64 {
        if !prior.contains(theta) {
            return f64::NEG_INFINITY;
        }
        match sim.log_likelihood(y_obs, theta) {
            Ok(l) if !l.is_nan() => l + prior.log_pdf(theta),
            _ => f64::NEG_INFINITY,
        }
    };
    let target = TargetDensity::new(prior.transforms(), log_post);
    let mut init_rng = Rng::stream(seed, &[STREAM_REFERENCE, 0]);
    let mut inits = Vec::with_capacity(cfg.n_chains);
    while inits.len() < cfg.n_chains {
        let mut found = false;
        for _ in 0..=MAX_RETRIES {
            let theta = prior.sample(&mut init_rng);
            if target.log_density(&theta).is_finite() {
                inits.push(theta);
                found = true;
                break;
            }
        }
        if !found {
            return Err(Error::Numeric { op: "reference_init" });
        }
    }
    slice_sample(
        &target,
        &inits,
        &prior.slice_widths(),
        cfg,
        &mut Rng::stream(seed, &[STREAM_REFERENCE, 1]),
    )
}
