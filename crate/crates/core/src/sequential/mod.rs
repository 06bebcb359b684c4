//! Round-based neural likelihood estimation.
//!
//! Each round draws parameters from the current proposal (the prior in
//! round one, the previous round's posterior draws afterwards), simulates
//! data, retrains a fresh flow on everything simulated so far and samples
//! the surrogate posterior `q(y_obs | theta) p(theta)` with the slice
//! sampler. SSNL and SNL differ only in the flow they train.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::{build_snl_flow, build_ssnl_flow, FlowStack, REDUCTIONS};
use crate::numeric::{Rng, Tensor};
use crate::samplers::{slice_sample, ChainSet, PosteriorSummary, SliceConfig, TargetDensity};
use crate::simulators::Simulator;
use crate::training::{select_reduction, train, Dataset, TrainConfig, TrainReport};

/// How many times a failed simulation is retried with a fresh parameter.
pub const MAX_RETRIES: usize = 100;

/// Stream labels under a round's RNG.
const STREAM_SIMULATE: u64 = 0;
const STREAM_PROPOSAL: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_TRAIN: u64 = 3;
const STREAM_SAMPLE: u64 = 4;

/// Retained fraction of the surjective layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reduction {
    Fixed(f64),
    /// Train every fraction in round one and keep the best on validation loss.
    Auto,
}

/// Surrogate family: a dimension-preserving flow or one with a surjection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Snl,
    Ssnl(Reduction),
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Snl => write!(f, "snl"),
            Method::Ssnl(Reduction::Fixed(r)) => write!(f, "ssnl@{r}"),
            Method::Ssnl(Reduction::Auto) => write!(f, "ssnl@auto"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    /// `snl`, `ssnl@<fraction>` with a fraction in [`REDUCTIONS`], or `ssnl@auto`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::Config(format!(
                "unknown method `{s}`; expected `snl`, `ssnl@auto` or `ssnl@<r>` with r in {REDUCTIONS:?}"
            ))
        };
        match s.trim() {
            "snl" => Ok(Method::Snl),
            "ssnl@auto" => Ok(Method::Ssnl(Reduction::Auto)),
            other => {
                let r: f64 = other.strip_prefix("ssnl@").ok_or_else(bad)?.parse().map_err(|_| bad())?;
                if REDUCTIONS.contains(&r) {
                    Ok(Method::Ssnl(Reduction::Fixed(r)))
                } else {
                    Err(bad())
                }
            }
        }
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

/// An observation and the simulator that is supposed to have produced it.
pub struct SbiProblem<'a> {
    simulator: &'a dyn Simulator,
    y_obs: Vec<f64>,
}

impl<'a> SbiProblem<'a> {
    pub fn new(simulator: &'a dyn Simulator, y_obs: Vec<f64>) -> Result<Self> {
        if y_obs.len() != simulator.obs_dim() {
            return Err(Error::shape(
                "sbi_problem",
                format!("y_obs has {} values, `{}` emits {}", y_obs.len(), simulator.id(), simulator.obs_dim()),
            ));
        }
        if y_obs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric { op: "sbi_problem" });
        }
        Ok(Self { simulator, y_obs })
    }

    pub fn simulator(&self) -> &dyn Simulator {
        self.simulator
    }

    pub fn y_obs(&self) -> &[f64] {
        &self.y_obs
    }

    pub fn theta_dim(&self) -> usize {
        self.simulator.theta_dim()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SequentialConfig {
    pub rounds: usize,
    pub sims_per_round: usize,
    pub training: TrainConfig,
    pub sampler: SliceConfig,
}

impl Default for SequentialConfig {
    fn default() -> Self {
        Self {
            rounds: 15,
            sims_per_round: 1000,
            training: TrainConfig::default(),
            sampler: SliceConfig::default(),
        }
    }
}

impl SequentialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.sims_per_round == 0 {
            return Err(Error::Config(format!(
                "rounds and sims_per_round must be positive, got {} and {}",
                self.rounds, self.sims_per_round
            )));
        }
        self.training.validate()?;
        self.sampler.validate()
    }
}

/// State after a completed round.
#[derive(Debug, Clone)]
pub struct RoundState {
    pub round: usize,
    pub dataset: Dataset,
    pub flow: FlowStack,
    /// Posterior draws that serve as the next round's proposal.
    pub bank: ChainSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTimings {
    pub simulate_secs: f64,
    pub train_secs: f64,
    pub sample_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub method: Method,
    /// Retained fraction actually trained; `None` for SNL.
    pub reduction: Option<f64>,
    pub n_data: usize,
    pub simulator_calls: usize,
    pub retries: usize,
    /// Best validation loss per candidate fraction when the reduction was
    /// chosen automatically in this round.
    pub reduction_candidates: Vec<(f64, f64)>,
    pub training: TrainReport,
    pub posterior: PosteriorSummary,
    pub timings: RoundTimings,
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct SequentialRun {
    pub method: Method,
    pub reports: Vec<RoundReport>,
    /// Posterior draws of every round.
    pub posteriors: Vec<ChainSet>,
    pub state: RoundState,
}

impl SequentialRun {
    pub fn total_simulator_calls(&self) -> usize {
        self.reports.iter().map(|r| r.simulator_calls).sum()
    }

    pub fn total_retries(&self) -> usize {
        self.reports.iter().map(|r| r.retries).sum()
    }

    /// The fraction selected (or fixed) for SSNL.
    pub fn reduction(&self) -> Option<f64> {
        self.reports.first().and_then(|r| r.reduction)
    }
}

/// Unnormalized surrogate posterior `log q(y_obs | theta) + log p(theta)`;
/// `-inf` outside the prior support or where the flow cannot be evaluated.
pub fn posterior_log_density(flow: &FlowStack, problem: &SbiProblem<'_>, theta: &[f64]) -> f64 {
    let prior = problem.simulator.prior();
    if theta.len() != prior.dim() || !prior.contains(theta) {
        return f64::NEG_INFINITY;
    }
    let lp = prior.log_pdf(theta);
    match flow.log_prob_one(&problem.y_obs, theta) {
        Ok(l) if !l.is_nan() => l + lp,
        _ => f64::NEG_INFINITY,
    }
}

/// Slice-sample the surrogate posterior of `flow`, starting chains at
/// prior draws.
pub fn sample_posterior(
    flow: &FlowStack,
    problem: &SbiProblem<'_>,
    cfg: &SliceConfig,
    rng: &mut Rng,
) -> Result<ChainSet> {
    let prior = problem.simulator.prior();
    let target = TargetDensity::new(prior.transforms(), |theta| posterior_log_density(flow, problem, theta));
    let mut init_rng = rng.derive(&[0]);
    let mut inits = Vec::with_capacity(cfg.n_chains);
    for _ in 0..cfg.n_chains {
        // chains must start where the surrogate is finite
        let mut tries = 0;
        loop {
            let theta = prior.sample(&mut init_rng);
            if target.log_density(&theta).is_finite() {
                inits.push(theta);
                break;
            }
            tries += 1;
            if tries > MAX_RETRIES {
                return Err(Error::Numeric { op: "posterior_init" });
            }
        }
    }
    slice_sample(&target, &inits, &prior.slice_widths(), cfg, &mut rng.derive(&[1]))
}

/// Parameter proposal for one round.
enum Proposal<'b> {
    Prior,
    Bank(&'b Tensor),
}

impl Proposal<'_> {
    fn draw(&self, problem: &SbiProblem<'_>, rng: &mut Rng) -> Vec<f64> {
        match self {
            Proposal::Prior => problem.simulator.prior().sample(rng),
            Proposal::Bank(t) => t.row_slice(rng.below(t.shape()[0])).to_vec(),
        }
    }

    /// `n` first-attempt parameters: bank rows without replacement while
    /// they last, then with replacement.
    fn initial(&self, problem: &SbiProblem<'_>, n: usize, rng: &mut Rng) -> Vec<Option<Vec<f64>>> {
        match self {
            Proposal::Prior => vec![None; n],
            Proposal::Bank(t) => {
                let rows = t.shape()[0];
                let perm = rng.permutation(rows);
                (0..n)
                    .map(|i| {
                        let idx = if i < rows { perm[i] } else { rng.below(rows) };
                        Some(t.row_slice(idx).to_vec())
                    })
                    .collect()
            }
        }
        .into_iter()
        .map(|v: Option<Vec<f64>>| v.filter(|theta| problem.simulator.prior().contains(theta)))
        .collect()
    }
}

/// Simulate `n` pairs in parallel. Each pair has its own stream; a failed
/// simulation is retried with a fresh proposal draw. Returns the pairs in
/// index order and the number of retries.
fn simulate_round(
    problem: &SbiProblem<'_>,
    proposal: &Proposal<'_>,
    n: usize,
    rng: &Rng,
) -> Result<(Vec<(Vec<f64>, Vec<f64>)>, usize)> {
    let firsts = proposal.initial(problem, n, &mut rng.derive(&[STREAM_PROPOSAL]));
    let sim = problem.simulator;
    let results: Vec<Result<(Vec<f64>, Vec<f64>, usize)>> = firsts
        .into_par_iter()
        .enumerate()
        .map(|(i, first)| {
            let mut stream = rng.derive(&[STREAM_SIMULATE, i as u64]);
            let mut theta = first.unwrap_or_else(|| proposal.draw(problem, &mut stream));
            let mut retries = 0;
            loop {
                let attempt = if sim.prior().contains(&theta) {
                    sim.simulate(&theta, &mut stream).and_then(|out| {
                        if out.y.iter().all(|v| v.is_finite()) {
                            Ok(out.y)
                        } else {
                            Err(Error::Simulator {
                                model: sim.id().into(),
                                reason: "non-finite output".into(),
                            })
                        }
                    })
                } else {
                    Err(Error::Simulator {
                        model: sim.id().into(),
                        reason: format!("proposal {theta:?} outside the prior support"),
                    })
                };
                match attempt {
                    Ok(y) => return Ok((y, theta, retries)),
                    Err(e) if retries >= MAX_RETRIES => {
                        return Err(Error::Simulator {
                            model: sim.id().into(),
                            reason: format!("simulation {i} failed after {MAX_RETRIES} retries: {e}"),
                        })
                    }
                    Err(e) => {
                        log::debug!("simulation {i} failed ({e}); redrawing parameters");
                        retries += 1;
                        theta = proposal.draw(problem, &mut stream);
                    }
                }
            }
        })
        .collect();
    let mut pairs = Vec::with_capacity(n);
    let mut retries = 0;
    for r in results {
        let (y, theta, k) = r?;
        retries += k;
        pairs.push((y, theta));
    }
    Ok((pairs, retries))
}

fn fresh_flow(problem: &SbiProblem<'_>, reduction: Option<f64>, rng: &mut Rng) -> Result<FlowStack> {
    let (d, p) = (problem.y_obs.len(), problem.theta_dim());
    match reduction {
        None => build_snl_flow(d, p, rng),
        Some(r) => build_ssnl_flow(d, p, r, rng),
    }
}

/// Writes per-round artifacts when a run directory is given.
pub struct ArtifactWriter {
    root: PathBuf,
}

impl ArtifactWriter {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn round_dir(&self, round: usize) -> PathBuf {
        self.root.join(format!("round-{round}"))
    }

    /// `dataset.csv`, `flow.json`, `posterior.csv` and `report.json`.
    pub fn write_round(&self, state: &RoundState, report: &RoundReport) -> Result<Vec<PathBuf>> {
        let dir = self.round_dir(state.round);
        std::fs::create_dir_all(&dir)?;
        let files = [
            dir.join("dataset.csv"),
            dir.join("flow.json"),
            dir.join("posterior.csv"),
            dir.join("report.json"),
        ];
        state.dataset.write_csv(&files[0])?;
        state.flow.save(&files[1])?;
        state.bank.write_csv(&files[2])?;
        write_json(&files[3], report)?;
        Ok(files.to_vec())
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Run `cfg.rounds` rounds of sequential estimation for `method`.
///
/// `on_round` sees every completed round (for artifact writing or
/// progress reporting); an error from it aborts the run.
pub fn run_sequential(
    problem: &SbiProblem<'_>,
    method: Method,
    cfg: &SequentialConfig,
    rng: &mut Rng,
    mut on_round: impl FnMut(&RoundState, &RoundReport) -> Result<()>,
) -> Result<SequentialRun> {
    cfg.validate()?;
    let root = rng.fork();
    let mut dataset = Dataset::new(problem.y_obs.len(), problem.theta_dim());
    let mut reduction = match method {
        Method::Snl => None,
        Method::Ssnl(Reduction::Fixed(r)) => Some(r),
        Method::Ssnl(Reduction::Auto) => None,
    };
    let mut reports = Vec::with_capacity(cfg.rounds);
    let mut posteriors: Vec<ChainSet> = Vec::with_capacity(cfg.rounds);
    let mut state: Option<RoundState> = None;

    for round in 1..=cfg.rounds {
        let round_rng = root.derive(&[round as u64]);
        let step = |e: Error| e.in_round(round);

        let t0 = Instant::now();
        let bank_rows;
        let proposal = match &state {
            None => Proposal::Prior,
            Some(s) => {
                bank_rows = s.bank.pooled();
                Proposal::Bank(&bank_rows)
            }
        };
        let (pairs, retries) = simulate_round(problem, &proposal, cfg.sims_per_round, &round_rng).map_err(step)?;
        for (y, theta) in &pairs {
            dataset.push(y, theta).map_err(step)?;
        }
        let simulate_secs = t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        let mut candidates = Vec::new();
        let (flow, training) = if method == Method::Ssnl(Reduction::Auto) && reduction.is_none() {
            let mut fits = Vec::with_capacity(REDUCTIONS.len());
            for (k, &r) in REDUCTIONS.iter().enumerate() {
                let stream = [STREAM_TRAIN, 100 + k as u64];
                let flow = fresh_flow(problem, Some(r), &mut round_rng.derive(&[STREAM_INIT, 100 + k as u64]))
                    .map_err(step)?;
                let (flow, report) =
                    train(flow, &dataset, &cfg.training, &mut round_rng.derive(&stream)).map_err(step)?;
                candidates.push((r, report.best_val_nll));
                fits.push((r, flow, report));
            }
            let scored: Vec<(f64, TrainReport)> = fits.iter().map(|(r, _, rep)| (*r, rep.clone())).collect();
            let chosen = select_reduction(&scored).map_err(step)?;
            log::info!("round {round}: selected retained fraction {chosen} from {candidates:?}");
            reduction = Some(chosen);
            let (_, flow, report) = fits.into_iter().find(|(r, _, _)| *r == chosen).expect("chosen among fits");
            (flow, report)
        } else {
            let flow = fresh_flow(problem, reduction, &mut round_rng.derive(&[STREAM_INIT])).map_err(step)?;
            train(flow, &dataset, &cfg.training, &mut round_rng.derive(&[STREAM_TRAIN])).map_err(step)?
        };
        let train_secs = t1.elapsed().as_secs_f64();

        let t2 = Instant::now();
        let bank = sample_posterior(&flow, problem, &cfg.sampler, &mut round_rng.derive(&[STREAM_SAMPLE]))
            .map_err(step)?;
        let sample_secs = t2.elapsed().as_secs_f64();

        let report = RoundReport {
            round,
            method,
            reduction,
            n_data: dataset.len(),
            simulator_calls: cfg.sims_per_round + retries,
            retries,
            reduction_candidates: candidates,
            training,
            posterior: bank.summary(),
            timings: RoundTimings {
                simulate_secs,
                train_secs,
                sample_secs,
            },
        };
        let current = RoundState {
            round,
            dataset: dataset.clone(),
            flow,
            bank,
        };
        on_round(&current, &report).map_err(step)?;
        log::info!(
            "{method} round {round}/{}: {} pairs, best val nll {:.4}",
            cfg.rounds,
            report.n_data,
            report.training.best_val_nll
        );
        posteriors.push(current.bank.clone());
        reports.push(report);
        state = Some(current);
    }

    Ok(SequentialRun {
        method,
        reports,
        posteriors,
        state: state.expect("at least one round"),
    })
}
