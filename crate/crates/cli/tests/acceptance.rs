//! Acceptance suite: one test per criterion, each printing a single
//! `criterion N: PASS|FAIL ...` line to stderr (uncaptured) before asserting.
//!
//! Criteria 9 and 10 run the desk-scale OU benchmark (hours on one core)
//! and are ignored by default:
//! `cargo test -p ssnl-cli --test acceptance -- --ignored --test-threads 1`.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use common::{gradcheck, grid_2d, made_structure, mean_var, pearson};
use ssnl_cli::benchmark::{benchmark, read_results, run_dir, CellStatus};
use ssnl_cli::config::ExperimentConfig;
use ssnl_cli::files::sha256_file;
use ssnl_core::flows::{build_snl_flow, build_ssnl_flow, FlowStack};
use ssnl_core::metrics::{h_divergences, DivergenceConfig};
use ssnl_core::numeric::{Rng, Tensor};
use ssnl_core::samplers::{slice_sample, split_rhat, ChainSet, SliceConfig, SupportTransform, TargetDensity};
use ssnl_core::sequential::{run_sequential, Method, Reduction, SbiProblem, SequentialConfig};
use ssnl_core::simulators::{Gmm, Ou, Simulator};
use ssnl_core::training::{mean_nll, train, Dataset, TrainConfig};

/// Writes the verdict line past the test harness's output capture.
fn report(criterion: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "criterion {criterion}: {verdict} {detail}");
}

#[test]
fn criterion_01_gradient_suite() {
    const TOL: f64 = 1e-4;
    let start = Instant::now();
    let mut worst: Vec<(String, f64)> = gradcheck::primitives(100, 101)
        .into_iter()
        .map(|(n, e)| (format!("op:{n}"), e))
        .collect();
    worst.push(("mlp".into(), gradcheck::mlp(100, 102)));
    worst.push(("made".into(), gradcheck::made(100, 103)));
    worst.push(("maf".into(), gradcheck::maf(100, 104)));
    worst.push(("surjection".into(), gradcheck::surjection(100, 105)));
    worst.push(("stack".into(), gradcheck::stack(100, 106)));
    worst.push(("ou_log_likelihood".into(), gradcheck::ou_log_likelihood(100, 107)));
    let secs = start.elapsed().as_secs_f64();
    let (name, max) = worst.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    let pass = *max < TOL && secs < 60.0;
    report(
        1,
        pass,
        &format!("{} components x 100 instances, worst rel err {max:.2e} ({name}) < {TOL:e}; {secs:.1}s < 60s", worst.len()),
    );
    assert!(pass);
}

fn grid_mass(stack: &FlowStack, theta: f64) -> f64 {
    let (grid, cell) = grid_2d(-6.0, 6.0, 0.02);
    let lp = stack.log_prob(&grid, &Tensor::row(vec![theta])).unwrap();
    lp.data().iter().map(|v| v.exp()).sum::<f64>() * cell
}

#[test]
fn criterion_02_flow_normalization() {
    let start = Instant::now();
    let mut rng = Rng::new(200);
    let mut masses = Vec::new();
    for k in 0..20 {
        let stack = if k < 10 {
            build_ssnl_flow(2, 1, 0.5, &mut rng).unwrap()
        } else {
            build_snl_flow(2, 1, &mut rng).unwrap()
        };
        masses.push(grid_mass(&stack, 2.0 * rng.uniform() - 1.0));
    }
    let secs = start.elapsed().as_secs_f64();
    let dev = masses.iter().map(|m| (m - 1.0).abs()).fold(0.0, f64::max);
    let pass = dev <= 0.02 && secs < 300.0;
    report(
        2,
        pass,
        &format!("10 SSNL (D=2, Q=1) + 10 SNL stacks, max |mass - 1| = {dev:.4} <= 0.02 on [-6,6]^2 step 0.02; {secs:.1}s < 300s"),
    );
    assert!(pass, "{masses:?}");
}

#[test]
fn criterion_03_made_structure() {
    let mut details = Vec::new();
    let mut pass = true;
    for d in [1, 3, 10] {
        let (forbidden, allowed) = made_structure(d, 20, 300 + d as u64);
        pass &= forbidden < 1e-10 && (d == 1 || allowed > 0.0);
        details.push(format!("d_in={d}: max forbidden |J| {forbidden:.1e}"));
    }
    report(3, pass, &format!("20 draws each; {} (< 1e-10)", details.join(", ")));
    assert!(pass);
}

fn gaussian_pairs(n: usize, rng: &mut Rng) -> Dataset {
    let mut data = Dataset::new(2, 1);
    for _ in 0..n {
        data.push(&[rng.normal(), rng.normal()], &[rng.uniform()]).unwrap();
    }
    data
}

#[test]
fn criterion_04_density_fit() {
    let entropy = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
    let start = Instant::now();
    let mut rng = Rng::new(400);
    let data = gaussian_pairs(5000, &mut rng);
    let stack = build_snl_flow(2, 1, &mut rng).unwrap();
    let (fitted, _) = train(stack, &data, &TrainConfig::default(), &mut rng).unwrap();
    let test = gaussian_pairs(5000, &mut Rng::new(401));
    let per_dim = mean_nll(&fitted, &test.y(), &test.theta()).unwrap() / 2.0;
    let secs = start.elapsed().as_secs_f64();
    let pass = (per_dim - entropy).abs() <= 0.05 && secs < 600.0;
    report(
        4,
        pass,
        &format!("held-out NLL {per_dim:.4} nats/dim vs entropy {entropy:.4} (|diff| <= 0.05); {secs:.1}s < 600s"),
    );
    assert!(pass);
}

#[test]
fn criterion_05_surrogate_fidelity() {
    let start = Instant::now();
    let ou = Ou::new(10).unwrap();
    let mut rng = Rng::new(500);
    let pairs = |n: usize, rng: &mut Rng| {
        let mut data = Dataset::new(10, 3);
        for _ in 0..n {
            let theta = ou.prior().sample(rng);
            data.push(&ou.simulate(&theta, rng).unwrap().y, &theta).unwrap();
        }
        data
    };
    let train_set = pairs(2500, &mut rng);
    let held_out = pairs(500, &mut rng);
    let stack = build_ssnl_flow(10, 3, 0.75, &mut rng).unwrap();
    let (fitted, _) = train(stack, &train_set, &TrainConfig::default(), &mut rng).unwrap();
    let (mut learned, mut exact) = (Vec::new(), Vec::new());
    for i in 0..held_out.len() {
        let (y, theta) = (held_out.y_row(i), held_out.theta_row(i));
        learned.push(fitted.log_prob_one(y, theta).unwrap());
        exact.push(ou.log_likelihood(y, theta).unwrap());
    }
    let r = pearson(&learned, &exact);
    let secs = start.elapsed().as_secs_f64();
    let pass = r > 0.9 && secs < 900.0;
    report(
        5,
        pass,
        &format!("OU T=10, SSNL@0.75 on 2500 pairs: Pearson r = {r:.4} > 0.9 on 500 held-out pairs; {secs:.1}s < 900s"),
    );
    assert!(pass);
}

/// Standard error of a coordinate's mean from 50 batch means per chain.
fn batch_means_se(cs: &ChainSet, j: usize) -> f64 {
    let mut means = Vec::new();
    for c in 0..cs.n_chains() {
        let t = cs.trace(c, j);
        let len = t.len() / 50;
        means.extend((0..50).map(|b| t[b * len..(b + 1) * len].iter().sum::<f64>() / len as f64));
    }
    (mean_var(&means).1 / means.len() as f64).sqrt()
}

#[test]
fn criterion_06_sampler_correctness() {
    let rho = 0.8;
    let target = TargetDensity::new(vec![SupportTransform::Identity; 2], move |x: &[f64]| {
        -0.5 * (x[0] * x[0] - 2.0 * rho * x[0] * x[1] + x[1] * x[1]) / (1.0 - rho * rho)
    });
    let mut rng = Rng::new(600);
    let inits: Vec<Vec<f64>> = (0..4).map(|_| vec![2.0 * rng.normal(), 2.0 * rng.normal()]).collect();
    let cs = slice_sample(&target, &inits, &[1.0, 1.0], &SliceConfig::default(), &mut rng).unwrap();
    let pooled = cs.pooled();
    let col = |j: usize| (0..pooled.shape()[0]).map(|i| pooled.row_slice(i)[j]).collect::<Vec<_>>();
    let (a, b) = (col(0), col(1));
    let means = cs.means();
    let vars = cs.variances();
    let se = [batch_means_se(&cs, 0), batch_means_se(&cs, 1)];
    let corr = pearson(&a, &b);
    let rhat = split_rhat(&cs).unwrap();
    let pass = (0..2).all(|j| means[j].abs() <= 3.0 * se[j] && (vars[j] - 1.0).abs() <= 0.1)
        && (corr - rho).abs() <= 0.05
        && rhat.iter().all(|r| *r < 1.01);
    report(
        6,
        pass,
        &format!(
            "rho=0.8, 4 chains: means ({:.3}, {:.3}) within 3 SE ({:.3}, {:.3}); variances ({:.3}, {:.3}) within 10%; corr {corr:.3} +/- 0.05; split R-hat ({:.4}, {:.4}) < 1.01",
            means[0], means[1], 3.0 * se[0], 3.0 * se[1], vars[0], vars[1], rhat[0], rhat[1]
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_07_round_bookkeeping() {
    let sim = Gmm::new();
    let mut obs_rng = Rng::new(700);
    let theta_obs = sim.prior().sample(&mut obs_rng);
    let problem = SbiProblem::new(&sim, sim.simulate(&theta_obs, &mut obs_rng).unwrap().y).unwrap();
    let cfg = SequentialConfig {
        rounds: 3,
        sims_per_round: 100,
        training: TrainConfig {
            learning_rate: 1e-3,
            max_epochs: 10,
            ..Default::default()
        },
        sampler: SliceConfig {
            n_chains: 2,
            n_steps: 400,
            burn_in: 200,
            ..Default::default()
        },
    };
    let mut sizes = Vec::new();
    let mut first_round = None;
    let run = run_sequential(&problem, Method::Ssnl(Reduction::Fixed(0.5)), &cfg, &mut Rng::new(701), |state, _| {
        sizes.push(state.dataset.len());
        if state.round == 1 {
            first_round = Some(state.dataset.clone());
        }
        Ok(())
    })
    .unwrap();
    let first = first_round.unwrap();
    let in_support = (0..first.len()).all(|i| sim.prior().contains(first.theta_row(i)));
    let ks: Vec<f64> = (0..2)
        .map(|j| ks_uniform(&(0..first.len()).map(|i| first.theta_row(i)[j]).collect::<Vec<_>>(), -10.0, 10.0))
        .collect();
    let pass = sizes == [100, 200, 300] && in_support && run.total_simulator_calls() == 300;
    report(
        7,
        pass,
        &format!(
            "GMM R=3 N_R=100: dataset sizes {sizes:?} == [100, 200, 300]; round-1 draws in prior support: {in_support} (KS to prior {:.3}, {:.3}; informational at n=100)",
            ks[0], ks[1]
        ),
    );
    assert!(pass);
}

fn ks_uniform(xs: &[f64], low: f64, high: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = (x - low) / (high - low);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn normal_sample(n: usize, shift: f64, rng: &mut Rng) -> Tensor {
    Tensor::matrix(n, 2, (0..2 * n).map(|_| shift + rng.normal()).collect()).unwrap()
}

#[test]
fn criterion_08_divergence_calibration() {
    let cfg = DivergenceConfig::default();
    let mut pass = true;
    let mut worst_identical: f64 = 0.0;
    let mut min_gap = f64::INFINITY;
    for seed in 0..10 {
        let mut rng = Rng::stream(800, &[seed]);
        let p = normal_sample(5000, 0.0, &mut rng);
        let q = normal_sample(5000, 3.0, &mut rng);
        let same = h_divergences(&p, &p, &cfg, &mut rng.derive(&[0])).unwrap();
        let shifted = h_divergences(&p, &q, &cfg, &mut rng.derive(&[1])).unwrap();
        worst_identical = worst_identical.max(same.d_min).max(same.d_js);
        min_gap = min_gap.min(shifted.d_min - same.d_min).min(shifted.d_js - same.d_js);
        pass &= same.d_min <= 0.05 && same.d_js <= 0.05 && shifted.d_min > same.d_min && shifted.d_js > same.d_js;
    }
    report(
        8,
        pass,
        &format!("10 seeds, 5000 draws: identical max(D_min, D_js) = {worst_identical:.4} <= 0.05; shifted minus identical >= {min_gap:.4} > 0"),
    );
    assert!(pass);
}

fn acceptance_dir(name: &str) -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name)
}

/// OU (T=100), SSNL@0.75 and SNL, 5 rounds of 500 simulations, protocol
/// defaults otherwise.
fn ou_benchmark_config(seeds: Vec<u64>) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml("[simulator]\nid = \"ou\"\n").unwrap();
    cfg.methods = vec![Method::Ssnl(Reduction::Fixed(0.75)), Method::Snl];
    cfg.rounds = 5;
    cfg.sims_per_round = 500;
    cfg.seeds = seeds;
    cfg
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
#[ignore = "desk-scale OU benchmark; takes hours"]
fn criterion_09_ou_directional_reproduction() {
    let out = acceptance_dir("criterion-09");
    let cfg = ou_benchmark_config((0..5).collect());
    let start = Instant::now();
    let manifest = benchmark(&cfg, &out, None).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let rows = read_results(&out.join("results.csv")).unwrap();

    let mut table = Vec::new();
    for round in 1..=5 {
        let med = |method: &str| {
            median(
                rows.iter()
                    .filter(|r| r.metric == "h_min" && r.method == method && r.round == round)
                    .map(|r| r.value)
                    .collect(),
            )
        };
        table.push((round, med("ssnl@0.75"), med("snl")));
    }
    let complete = manifest.cells.iter().all(|c| c.status == CellStatus::Ok)
        && rows.len() == 2 * 5 * 5 * 4
        && rows.iter().all(|r| r.value.is_finite());
    let (_, ssnl, snl) = table[4];
    let directional = ssnl <= 1.1 * snl;
    let lines: Vec<String> = table.iter().map(|(r, a, b)| format!("round {r}: SSNL {a:.4} SNL {b:.4}")).collect();
    let text = format!(
        "median H-Min per round over 5 seeds\n{}\ncomplete with finite metrics: {complete}\nfinal SSNL {ssnl:.4} <= 1.1 x SNL {snl:.4}: {directional}\nwall time {secs:.0}s\n",
        lines.join("\n")
    );
    std::fs::write(out.join("acceptance.txt"), &text).unwrap();
    report(
        9,
        complete && directional,
        &format!(
            "OU T=100, R=5, N_R=500, 5 seeds: {}; final median H-Min SSNL {ssnl:.4} <= 1.1 x SNL {snl:.4}: {directional}; {secs:.0}s",
            lines.join("; ")
        ),
    );
    assert!(complete, "a cell failed or produced non-finite metrics");
    assert!(directional, "directional bound failed:\n{text}");
}

#[test]
#[ignore = "repeats the desk-scale OU benchmark for one seed"]
fn criterion_10_determinism() {
    let seed = 0;
    let cfg = ou_benchmark_config(vec![seed]);
    let first = acceptance_dir("criterion-10");
    benchmark(&cfg, &first, None).unwrap();
    // compare against the criterion 9 run when present, else run twice
    let earlier = acceptance_dir("criterion-09");
    let other = if earlier.join("manifest.json").exists() {
        earlier
    } else {
        let again = acceptance_dir("criterion-10-repeat");
        benchmark(&cfg, &again, None).unwrap();
        again
    };
    let mut compared = 0;
    let mut mismatches = Vec::new();
    for method in &cfg.methods {
        for round in 1..=cfg.rounds {
            for file in ["dataset.csv", "posterior.csv"] {
                let rel = Path::new(&format!("round-{round}")).join(file);
                let a = sha256_file(&run_dir(&first, *method, seed).join(&rel)).unwrap();
                let b = sha256_file(&run_dir(&other, *method, seed).join(&rel)).unwrap();
                compared += 1;
                if a != b {
                    mismatches.push(format!("{method} {}", rel.display()));
                }
            }
        }
    }
    let pass = mismatches.is_empty();
    report(
        10,
        pass,
        &format!("seed {seed}: {compared} dataset/posterior CSVs compared against {}, {} mismatches", other.display(), mismatches.len()),
    );
    assert!(pass, "{mismatches:?}");
}
