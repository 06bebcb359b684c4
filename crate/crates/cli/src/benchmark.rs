//! The `benchmark` subcommand: every (method, seed) cell runs the full
//! sequential protocol, scores each round and writes its own directory.
//! Results are merged by a single writer at the end.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use ssnl_core::metrics::h_divergences;
use ssnl_core::numeric::{Rng, Tensor};
use ssnl_core::sequential::{run_sequential, ArtifactWriter, Method, RoundReport, SbiProblem};
use ssnl_core::simulators::{build_simulator, Simulator};
use ssnl_core::{Error, Result};

use crate::commands::{reference_dir, reference_one, subsample, CODE_VERSION};
use crate::config::ExperimentConfig;
use crate::files::{inventory, write_json, FileEntry, MANIFEST_VERSION};
use crate::observe::{observation, STREAM_METRICS, STREAM_RUN};

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

/// One long-format results row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub run_id: String,
    pub method: String,
    pub round: usize,
    pub budget: usize,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
}

/// Median and range of a metric across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub round: usize,
    pub budget: usize,
    pub metric: String,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionChoice {
    pub selected: f64,
    /// `(retained fraction, best validation loss)` from round one.
    pub candidates: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub n_data: usize,
    pub simulator_calls: usize,
    pub retries: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_nll: f64,
    pub stopped_early: bool,
    pub simulate_secs: f64,
    pub train_secs: f64,
    pub sample_secs: f64,
    pub metrics_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellManifest {
    pub manifest_version: u32,
    pub code_version: String,
    pub config_hash: String,
    pub run_id: String,
    pub method: Method,
    pub seed: u64,
    pub simulator: String,
    pub theta_obs: Vec<f64>,
    pub y_obs: Vec<f64>,
    pub sims_per_round: usize,
    pub rounds_requested: usize,
    pub rounds_completed: usize,
    pub simulator_calls: usize,
    pub retries: usize,
    pub reduction: Option<ReductionChoice>,
    pub rounds: Vec<RoundRecord>,
    pub status: CellStatus,
    pub error: Option<String>,
    pub files: Vec<FileEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEntry {
    pub run_id: String,
    pub method: Method,
    pub seed: u64,
    pub status: CellStatus,
    pub error: Option<String>,
    pub rounds_completed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationEntry {
    pub seed: u64,
    pub theta_obs: Vec<f64>,
    pub y_obs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub manifest_version: u32,
    pub code_version: String,
    pub command: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub observations: Vec<ObservationEntry>,
    /// Seeds whose reference posterior failed, with the error.
    pub reference_errors: BTreeMap<u64, String>,
    pub cells: Vec<CellEntry>,
    pub files: Vec<FileEntry>,
}

impl BenchmarkManifest {
    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.status == CellStatus::Failed).count()
    }
}

/// `ssnl@0.75` -> `ssnl-0.75`; used in directory names.
pub fn run_id(method: Method, seed: u64) -> String {
    format!("{}-seed{seed}", method.to_string().replace('@', "-"))
}

pub fn run_dir(out: &Path, method: Method, seed: u64) -> PathBuf {
    out.join("runs").join(run_id(method, seed))
}

struct CellResult {
    entry: CellEntry,
    rows: Vec<ResultRow>,
}

/// Runs every cell, writes `results.csv`, `summary.csv` and
/// `manifest.json` under `out`. Cell failures are recorded, not returned;
/// only setup and output errors are.
pub fn benchmark(cfg: &ExperimentConfig, out: &Path, jobs: Option<usize>) -> Result<BenchmarkManifest> {
    cfg.validate()?;
    let sim = build_simulator(&cfg.simulator)?;
    std::fs::create_dir_all(out)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    pool.install(|| {
        let observations: Vec<Result<ObservationEntry>> = cfg
            .seeds
            .par_iter()
            .map(|&seed| {
                observation(sim.as_ref(), seed).map(|(theta_obs, y_obs)| ObservationEntry { seed, theta_obs, y_obs })
            })
            .collect();

        let want_reference = cfg.metrics.divergences && sim.has_likelihood();
        let references: Vec<Option<Result<Tensor>>> = cfg
            .seeds
            .par_iter()
            .map(|&seed| {
                want_reference.then(|| {
                    log::info!("seed {seed}: sampling the exact reference posterior");
                    let (_, pooled) = reference_one(cfg, sim.as_ref(), seed, out)?;
                    subsample(&pooled, cfg.metrics.n_draws, &mut Rng::stream(seed, &[STREAM_METRICS, 0]))
                })
            })
            .collect();

        let cells: Vec<(usize, Method)> = (0..cfg.seeds.len())
            .flat_map(|s| cfg.methods.iter().map(move |&m| (s, m)))
            .collect();
        let results: Vec<CellResult> = cells
            .par_iter()
            .map(|&(s, method)| {
                let seed = cfg.seeds[s];
                let reference = match &references[s] {
                    Some(Ok(t)) => Some(Ok(t)),
                    Some(Err(e)) => Some(Err(e.to_string())),
                    None => None,
                };
                match &observations[s] {
                    Ok(obs) => run_cell(cfg, sim.as_ref(), method, obs, reference, out),
                    Err(e) => failed_before_start(method, seed, &format!("observation: {e}")),
                }
            })
            .collect();

        let mut rows: Vec<ResultRow> = results.iter().flat_map(|r| r.rows.clone()).collect();
        add_normalized_mse(&mut rows);
        write_results(&out.join(RESULTS_FILE), &rows)?;
        write_summary(&out.join(SUMMARY_FILE), &summarize(&rows, &cfg.methods))?;

        let manifest = BenchmarkManifest {
            manifest_version: MANIFEST_VERSION,
            code_version: CODE_VERSION.into(),
            command: "benchmark".into(),
            config_hash: cfg.hash(),
            config: cfg.clone(),
            observations: observations.iter().filter_map(|o| o.as_ref().ok().cloned()).collect(),
            reference_errors: cfg
                .seeds
                .iter()
                .zip(&references)
                .filter_map(|(s, r)| match r {
                    Some(Err(e)) => Some((*s, e.to_string())),
                    _ => None,
                })
                .collect(),
            cells: results.into_iter().map(|r| r.entry).collect(),
            files: inventory(out, &["manifest.json"])?,
        };
        write_json(&out.join("manifest.json"), &manifest)?;
        Ok(manifest)
    })
}

fn failed_before_start(method: Method, seed: u64, error: &str) -> CellResult {
    log::error!("{}: {error}", run_id(method, seed));
    CellResult {
        entry: CellEntry {
            run_id: run_id(method, seed),
            method,
            seed,
            status: CellStatus::Failed,
            error: Some(error.to_string()),
            rounds_completed: 0,
        },
        rows: Vec::new(),
    }
}

fn run_cell(
    cfg: &ExperimentConfig,
    sim: &dyn Simulator,
    method: Method,
    obs: &ObservationEntry,
    reference: Option<std::result::Result<&Tensor, String>>,
    out: &Path,
) -> CellResult {
    let seed = obs.seed;
    let id = run_id(method, seed);
    let reference = match reference {
        Some(Err(e)) => return failed_before_start(method, seed, &format!("reference posterior: {e}")),
        Some(Ok(t)) => Some(t),
        None => None,
    };
    let dir = run_dir(out, method, seed);
    if dir.exists() {
        if let Err(e) = std::fs::remove_dir_all(&dir) {
            return failed_before_start(method, seed, &format!("cannot clear {}: {e}", dir.display()));
        }
    }
    let writer = ArtifactWriter::new(&dir);
    let rows = Mutex::new(Vec::new());
    let records = Mutex::new(Vec::new());
    let reports: Mutex<Vec<RoundReport>> = Mutex::new(Vec::new());

    let outcome = SbiProblem::new(sim, obs.y_obs.clone()).and_then(|problem| {
        run_sequential(&problem, method, &cfg.sequential(), &mut Rng::stream(seed, &[STREAM_RUN]), |state, report| {
            writer.write_round(state, report)?;
            let t = std::time::Instant::now();
            let budget = state.round * cfg.sims_per_round;
            let row = |metric: &str, value: f64| ResultRow {
                run_id: id.clone(),
                method: method.to_string(),
                round: state.round,
                budget,
                metric: metric.into(),
                value,
                seed,
            };
            let pooled = state.bank.pooled();
            let mut new_rows = vec![row("mse", ssnl_core::metrics::mse_to_truth(&pooled, &obs.theta_obs)?)];
            if let Some(p) = reference {
                let q = subsample(
                    &pooled,
                    cfg.metrics.n_draws,
                    &mut Rng::stream(seed, &[STREAM_METRICS, 2, state.round as u64]),
                )?;
                let div = h_divergences(
                    p,
                    &q,
                    &cfg.metrics.divergence,
                    &mut Rng::stream(seed, &[STREAM_METRICS, 1, state.round as u64]),
                )?;
                write_json(&writer.round_dir(state.round).join("metrics.json"), &div)?;
                new_rows.push(row("h_min", div.d_min));
                new_rows.push(row("h_js", div.d_js));
            }
            log::info!(
                "{id} round {}: {}",
                state.round,
                new_rows.iter().map(|r| format!("{}={:.4}", r.metric, r.value)).collect::<Vec<_>>().join(" ")
            );
            rows.lock().expect("rows lock").extend(new_rows);
            records.lock().expect("records lock").push(round_record(report, t.elapsed().as_secs_f64()));
            reports.lock().expect("reports lock").push(report.clone());
            Ok(())
        })
    });

    let reports = reports.into_inner().expect("reports lock");
    let records = records.into_inner().expect("records lock");
    let (status, error) = match &outcome {
        Ok(_) => (CellStatus::Ok, None),
        Err(e) => {
            log::error!("{id}: {e}");
            (CellStatus::Failed, Some(e.to_string()))
        }
    };
    let reduction = match method {
        Method::Ssnl(_) => reports.first().and_then(|r| {
            r.reduction.map(|selected| ReductionChoice {
                selected,
                candidates: r.reduction_candidates.clone(),
            })
        }),
        Method::Snl => None,
    };
    let mut manifest = CellManifest {
        manifest_version: MANIFEST_VERSION,
        code_version: CODE_VERSION.into(),
        config_hash: cfg.hash(),
        run_id: id.clone(),
        method,
        seed,
        simulator: sim.id().into(),
        theta_obs: obs.theta_obs.clone(),
        y_obs: obs.y_obs.clone(),
        sims_per_round: cfg.sims_per_round,
        rounds_requested: cfg.rounds,
        rounds_completed: reports.len(),
        simulator_calls: reports.iter().map(|r| r.simulator_calls).sum(),
        retries: reports.iter().map(|r| r.retries).sum(),
        reduction,
        rounds: records,
        status,
        error,
        files: Vec::new(),
    };
    let written = std::fs::create_dir_all(&dir)
        .map_err(Error::from)
        .and_then(|_| inventory(&dir, &["manifest.json"]))
        .and_then(|files| {
            manifest.files = files;
            write_json(&dir.join("manifest.json"), &manifest)
        });
    if let Err(e) = written {
        manifest.status = CellStatus::Failed;
        manifest.error = Some(format!("writing manifest: {e}"));
    }
    CellResult {
        entry: CellEntry {
            run_id: id,
            method,
            seed,
            status: manifest.status,
            error: manifest.error,
            rounds_completed: manifest.rounds_completed,
        },
        rows: rows.into_inner().expect("rows lock"),
    }
}

fn round_record(r: &RoundReport, metrics_secs: f64) -> RoundRecord {
    RoundRecord {
        round: r.round,
        n_data: r.n_data,
        simulator_calls: r.simulator_calls,
        retries: r.retries,
        epochs_run: r.training.epochs_run,
        best_epoch: r.training.best_epoch,
        best_val_nll: r.training.best_val_nll,
        stopped_early: r.training.stopped_early,
        simulate_secs: r.timings.simulate_secs,
        train_secs: r.timings.train_secs,
        sample_secs: r.timings.sample_secs,
        metrics_secs,
    }
}

/// Adds `mse_normalized`: each run's MSE divided by the smallest MSE among
/// the methods of the same seed and round.
fn add_normalized_mse(rows: &mut Vec<ResultRow>) {
    let mut best: BTreeMap<(u64, usize), f64> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.metric == "mse") {
        let e = best.entry((r.seed, r.round)).or_insert(f64::INFINITY);
        *e = e.min(r.value);
    }
    let extra: Vec<ResultRow> = rows
        .iter()
        .filter(|r| r.metric == "mse")
        .filter_map(|r| {
            let m = best[&(r.seed, r.round)];
            (m > 0.0).then(|| ResultRow {
                metric: "mse_normalized".into(),
                value: r.value / m,
                ..r.clone()
            })
        })
        .collect();
    rows.extend(extra);
}

const METRIC_ORDER: [&str; 4] = ["h_min", "h_js", "mse", "mse_normalized"];

fn metric_rank(m: &str) -> usize {
    METRIC_ORDER.iter().position(|x| *x == m).unwrap_or(METRIC_ORDER.len())
}

fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| {
        (a.seed, &a.run_id, a.round, metric_rank(&a.metric)).cmp(&(b.seed, &b.run_id, b.round, metric_rank(&b.metric)))
    });
    let mut w = csv::Writer::from_path(path)?;
    for r in &sorted {
        w.serialize(r)?;
    }
    if sorted.is_empty() {
        w.write_record(["run_id", "method", "round", "budget", "metric", "value", "seed"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Median, min and max of every (method, round, metric) across seeds.
pub fn summarize(rows: &[ResultRow], methods: &[Method]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(usize, usize, usize, String), (usize, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        let m = methods.iter().position(|m| m.to_string() == r.method).unwrap_or(methods.len());
        groups
            .entry((m, r.round, metric_rank(&r.metric), r.metric.clone()))
            .or_insert((r.budget, Vec::new()))
            .1
            .push(r.value);
    }
    groups
        .into_iter()
        .map(|((m, round, _, metric), (budget, mut v))| {
            v.sort_by(f64::total_cmp);
            let n = v.len();
            let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
            SummaryRow {
                method: methods.get(m).map(|x| x.to_string()).unwrap_or_default(),
                round,
                budget,
                metric,
                median,
                min: v[0],
                max: v[n - 1],
                n_seeds: n,
            }
        })
        .collect()
}

fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["method", "round", "budget", "metric", "median", "min", "max", "n_seeds"])?;
    }
    w.flush()?;
    Ok(())
}

/// Reference posterior directory for a seed, if `benchmark` wrote one.
pub fn reference_posterior(out: &Path, seed: u64) -> PathBuf {
    reference_dir(out, seed).join("posterior.csv")
}
