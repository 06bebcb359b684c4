use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ssnl_cli::benchmark::benchmark;
use ssnl_cli::commands::{evaluate, reference, simulate, Comparison};
use ssnl_cli::config::{ExperimentConfig, MetricsConfig};
use ssnl_cli::files::write_json;
use ssnl_core::{Error, Result};

#[derive(Parser)]
#[command(name = "ssnl", version, about = "Sequential neural likelihood benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw (theta, y) pairs from the prior predictive.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of pairs; overrides `simulate.n`.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Run every (method, seed) cell of the sequential protocol.
    Benchmark {
        #[command(flatten)]
        common: Common,
        /// Run only this seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Long-run exact posterior for models with a tractable likelihood.
    Reference {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Divergences between two sample files, or MSE against a known parameter.
    Evaluate {
        /// Posterior sample CSV with `theta_1..theta_p` columns.
        #[arg(long)]
        posterior: PathBuf,
        /// Second sample CSV (e.g. a reference posterior).
        #[arg(long, conflicts_with = "theta_obs", required_unless_present = "theta_obs")]
        against: Option<PathBuf>,
        /// Known parameter, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        theta_obs: Option<Vec<f64>>,
        /// Optional config supplying `[metrics]` settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the report to this JSON file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap exits with 2 on usage errors, which would read as a partial failure
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let cfg = ExperimentConfig::load(&common.config)?;
    let out = common
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set `output_dir`".into()))?;
    Ok((cfg, out))
}

fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        b = b.num_threads(j.max(1));
    }
    b.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?.install(f)
}

fn run(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Simulate { common, seed, n } => {
            let (cfg, out) = load(&common)?;
            let m = simulate(&cfg, n.unwrap_or(cfg.simulate.n), seed, &out)?;
            println!("wrote {} pairs to {}", m.n, out.join("dataset.csv").display());
        }
        Command::Benchmark { common, seed, jobs } => {
            let (mut cfg, out) = load(&common)?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            let m = benchmark(&cfg, &out, jobs)?;
            let failed = m.failed_cells();
            println!("{} of {} cells completed; results in {}", m.cells.len() - failed, m.cells.len(), out.display());
            if failed > 0 {
                for c in m.cells.iter().filter(|c| c.error.is_some()) {
                    eprintln!("{}: {}", c.run_id, c.error.as_deref().unwrap_or_default());
                }
                return Ok(ExitCode::from(2));
            }
        }
        Command::Reference { common, seed, jobs } => {
            let (cfg, out) = load(&common)?;
            let seeds = seed.map_or_else(|| cfg.seeds.clone(), |s| vec![s]);
            for r in with_jobs(jobs, || reference(&cfg, &seeds, &out))? {
                let rhat: Vec<String> = r.rhat.iter().map(|v| format!("{v:.4}")).collect();
                println!("seed {}: R-hat [{}]", r.seed, rhat.join(", "));
            }
        }
        Command::Evaluate { posterior, against, theta_obs, config, seed, out } => {
            let metrics = match &config {
                Some(path) => ExperimentConfig::load(path)?.metrics,
                None => MetricsConfig::default(),
            };
            let against = match (against, theta_obs) {
                (Some(p), _) => Comparison::Samples(p),
                (None, Some(t)) => Comparison::Truth(t),
                (None, None) => unreachable!("clap requires one of --against / --theta-obs"),
            };
            let report = evaluate(&posterior, &against, &metrics.divergence, metrics.n_draws, seed)?;
            if let Some(path) = out.as_deref() {
                write_json(path, &report)?;
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}
