mod common;

use std::f64::consts::PI;

use ssnl_core::metrics::{default_bandwidths, h_divergences, kde_fit_nll, mse_to_truth, DivergenceConfig, Kde};
use ssnl_core::numeric::{Rng, Tensor};

fn gaussian(n: usize, mean: &[f64], seed: u64) -> Tensor {
    let mut rng = Rng::new(seed);
    let d = mean.len();
    let data = (0..n * d).map(|i| mean[i % d] + rng.normal()).collect();
    Tensor::matrix(n, d, data).unwrap()
}

#[test]
fn held_out_nll_recovers_gaussian_entropy() {
    let sample = gaussian(5000, &[0.0], 1);
    let eval = gaussian(5000, &[0.0], 2);
    let fit = kde_fit_nll(&sample, &eval, &default_bandwidths()).unwrap();
    let entropy = 0.5 * (2.0 * PI * std::f64::consts::E).ln();
    assert!((fit.mean_nll - entropy).abs() < 0.05, "{} vs {entropy}", fit.mean_nll);
    assert!(fit.bandwidth > 0.1, "held-out search picked the smallest bandwidth");
}

#[test]
fn held_out_curve_is_not_minimized_at_smallest_bandwidth() {
    let sample = gaussian(2000, &[0.0], 3);
    let eval = gaussian(500, &[0.0], 4);
    let fit = kde_fit_nll(&sample, &eval, &default_bandwidths()).unwrap();
    let first = fit.curve[0].1;
    assert!(fit.mean_nll < first);
    // in-sample scoring keeps improving as the bandwidth shrinks
    let in_sample = kde_fit_nll(&sample, &sample, &[0.01, 0.1]).unwrap();
    assert_eq!(in_sample.bandwidth, 0.01);
}

#[test]
fn single_point_kde_is_a_gaussian() {
    let centre = [0.3, -1.2];
    let h = 0.7;
    let kde = Kde::new(Tensor::matrix(1, 2, centre.to_vec()).unwrap(), h).unwrap();
    let mut rng = Rng::new(5);
    for _ in 0..20 {
        let x = [rng.normal() * 2.0, rng.normal() * 2.0];
        let sq = (x[0] - centre[0]).powi(2) + (x[1] - centre[1]).powi(2);
        let closed = -sq / (2.0 * h * h) - (2.0 * PI * h * h).ln();
        assert!((kde.log_pdf(&x).unwrap() - closed).abs() < 1e-12);
    }
    let eval = gaussian(50, &[0.0, 0.0], 6);
    let fit = kde_fit_nll(kde.points(), &eval, &[h]).unwrap();
    let expected = -kde.log_pdf_rows(&eval).unwrap().iter().sum::<f64>() / 50.0;
    assert!((fit.mean_nll - expected).abs() < 1e-12);
}

#[test]
fn kde_integrates_to_one() {
    let pts = gaussian(30, &[0.0, 0.0], 7);
    let kde = Kde::new(pts, 0.4).unwrap();
    let (grid, cell) = common::grid_2d(-6.0, 6.0, 0.05);
    let mass: f64 = kde.log_pdf_rows(&grid).unwrap().iter().map(|v| v.exp()).sum::<f64>() * cell;
    assert!((mass - 1.0).abs() < 1e-3, "{mass}");
}

#[test]
fn divergences_separate_distributions() {
    let cfg = DivergenceConfig::default();
    let p = gaussian(5000, &[0.0, 0.0], 10);
    let same = gaussian(5000, &[0.0, 0.0], 11);
    let shifted = gaussian(5000, &[3.0, 3.0], 11);
    let a = h_divergences(&p, &same, &cfg, &mut Rng::new(0)).unwrap();
    assert!(a.d_min <= 0.05 && a.d_js <= 0.05, "{a:?}");
    let b = h_divergences(&p, &shifted, &cfg, &mut Rng::new(0)).unwrap();
    assert!(b.d_min > a.d_min && b.d_js > a.d_js, "{b:?}");
    assert!(b.d_min > 0.0 && b.d_js > 0.0);
    assert!(b.d_min_raw >= b.d_js_raw);
    assert_eq!(b.fold_entropies.len(), 5);

    let swapped = h_divergences(&shifted, &p, &cfg, &mut Rng::new(0)).unwrap();
    assert!((swapped.d_min - b.d_min).abs() < 0.01);
    assert!((swapped.d_js - b.d_js).abs() < 0.01);
}

#[test]
fn divergences_are_deterministic_per_seed() {
    let cfg = DivergenceConfig::default();
    let p = gaussian(400, &[0.0, 1.0, 2.0], 12);
    let q = gaussian(300, &[0.5, 1.0, 2.0], 13);
    let a = h_divergences(&p, &q, &cfg, &mut Rng::new(9)).unwrap();
    let b = h_divergences(&p, &q, &cfg, &mut Rng::new(9)).unwrap();
    assert_eq!(a, b);
    let c = h_divergences(&p, &q, &cfg, &mut Rng::new(10)).unwrap();
    assert_ne!(a.fold_entropies, c.fold_entropies);
}

#[test]
fn divergences_are_invariant_to_affine_rescaling() {
    let cfg = DivergenceConfig::default();
    let p = gaussian(500, &[0.0, 0.0], 14);
    let q = gaussian(500, &[1.0, 0.0], 15);
    let scale = |t: &Tensor| t.map(|v| 100.0 * v - 7.0);
    let a = h_divergences(&p, &q, &cfg, &mut Rng::new(1)).unwrap();
    let b = h_divergences(&scale(&p), &scale(&q), &cfg, &mut Rng::new(1)).unwrap();
    assert!((a.d_min_raw - b.d_min_raw).abs() < 1e-9);
    assert!((a.d_js_raw - b.d_js_raw).abs() < 1e-9);
}

#[test]
fn divergence_input_errors() {
    let cfg = DivergenceConfig::default();
    let p = gaussian(200, &[0.0, 0.0], 1);
    let q = gaussian(200, &[0.0], 2);
    assert!(h_divergences(&p, &q, &cfg, &mut Rng::new(0)).is_err());
    let small = gaussian(99, &[0.0, 0.0], 3);
    assert!(h_divergences(&p, &small, &cfg, &mut Rng::new(0)).is_err());
}

#[test]
fn posterior_draws_beat_prior_draws_on_mse() {
    // theta ~ N(0, I_3), y_i ~ N(theta, I), 20 observations: the posterior is
    // N(sum(y) / 21, I / 21).
    let mut rng = Rng::new(20);
    let truth: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
    let n_obs = 20.0;
    let sums: Vec<f64> = truth
        .iter()
        .map(|t| (0..20).map(|_| t + rng.normal()).sum::<f64>())
        .collect();
    let post_mean: Vec<f64> = sums.iter().map(|s| s / (n_obs + 1.0)).collect();
    let post_sd = (1.0 / (n_obs + 1.0)).sqrt();
    let draws = 2000;
    let prior = Tensor::matrix(draws, 3, (0..draws * 3).map(|_| rng.normal()).collect()).unwrap();
    let post = Tensor::matrix(
        draws,
        3,
        (0..draws * 3).map(|i| post_mean[i % 3] + post_sd * rng.normal()).collect(),
    )
    .unwrap();
    let mp = mse_to_truth(&prior, &truth).unwrap();
    let mq = mse_to_truth(&post, &truth).unwrap();
    assert!(mq < mp, "posterior {mq} vs prior {mp}");
}
