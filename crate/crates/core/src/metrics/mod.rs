//! Posterior-quality metrics.
//!
//! H-divergences compare two sample sets through the cross-validated
//! negative log-likelihood of Gaussian kernel density estimates: the entropy
//! of each set and of their balanced mixture. Samples are standardized
//! jointly first, so a single isotropic bandwidth grid applies to every
//! parameter and the divergences are reported in standardized units.

mod kde;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use kde::{default_bandwidths, kde_fit_nll, Kde, KdeFit};

use crate::error::{Error, Result};
use crate::numeric::{Rng, Tensor};

/// Smallest sample set accepted by [`h_divergences`].
pub const MIN_SAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DivergenceConfig {
    pub folds: usize,
    pub bandwidths: Vec<f64>,
    /// Fraction of each set held out to score a bandwidth.
    pub holdout_fraction: f64,
    /// Points drawn from each set per mixture fold; `None` uses half the
    /// smaller set.
    pub fold_size: Option<usize>,
}

impl Default for DivergenceConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            bandwidths: default_bandwidths(),
            holdout_fraction: 0.2,
            fold_size: None,
        }
    }
}

impl DivergenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds == 0 {
            return Err(Error::Config("divergence folds must be positive".into()));
        }
        if self.bandwidths.is_empty() || self.bandwidths.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(Error::Config("bandwidth grid must be non-empty and positive".into()));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::Config(format!(
                "holdout_fraction must be in (0, 1), got {}",
                self.holdout_fraction
            )));
        }
        if self.fold_size == Some(0) {
            return Err(Error::Config("fold_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HDivergenceResult {
    /// Clamped at zero.
    pub d_min: f64,
    /// Clamped at zero.
    pub d_js: f64,
    /// Estimates before clamping.
    pub d_min_raw: f64,
    pub d_js_raw: f64,
    pub entropy_p: f64,
    pub entropy_q: f64,
    pub entropy_mixture: f64,
    pub fold_entropies: Vec<f64>,
    pub bandwidth_p: f64,
    pub bandwidth_q: f64,
    pub fold_bandwidths: Vec<f64>,
}

/// H-Min and H-Jensen-Shannon divergences between two sample sets `[n, d]`.
///
/// Held-out splits and fold subsamples are drawn from index permutations
/// shared by both sets, so swapping `p` and `q` fits and scores the same
/// points.
pub fn h_divergences(p: &Tensor, q: &Tensor, cfg: &DivergenceConfig, rng: &mut Rng) -> Result<HDivergenceResult> {
    cfg.validate()?;
    let (np, d) = p.dims2("h_divergences")?;
    let (nq, dq) = q.dims2("h_divergences")?;
    if d != dq {
        return Err(Error::Shape {
            op: "h_divergences",
            detail: format!("samples have {d} and {dq} columns"),
        });
    }
    if np < MIN_SAMPLES || nq < MIN_SAMPLES {
        return Err(Error::InvalidParameter(format!(
            "h_divergences needs at least {MIN_SAMPLES} samples per set, got {np} and {nq}"
        )));
    }
    let (p, q) = standardize_jointly(p, q)?;
    let base = rng.fork();

    let entropy = |x: &Tensor, n: usize| -> Result<KdeFit> {
        let perm = base.derive(&[0]).permutation(n);
        let k = holdout_count(n, cfg.holdout_fraction);
        kde_fit_nll(&x.gather_rows(&perm[k..])?, &x.gather_rows(&perm[..k])?, &cfg.bandwidths)
    };
    let fit_p = entropy(&p, np)?;
    let fit_q = entropy(&q, nq)?;

    let m = cfg.fold_size.unwrap_or(np.min(nq) / 2).min(np).min(nq);
    let k = holdout_count(m, cfg.holdout_fraction);
    let folds: Vec<KdeFit> = (0..cfg.folds)
        .into_par_iter()
        .map(|f| {
            let ip = base.derive(&[1, f as u64]).permutation(np);
            let iq = base.derive(&[1, f as u64]).permutation(nq);
            let (ip, iq) = (&ip[..m], &iq[..m]);
            let fit = concat_rows(&p.gather_rows(&ip[k..])?, &q.gather_rows(&iq[k..])?)?;
            let eval = concat_rows(&p.gather_rows(&ip[..k])?, &q.gather_rows(&iq[..k])?)?;
            kde_fit_nll(&fit, &eval, &cfg.bandwidths)
        })
        .collect::<Result<_>>()?;

    let fold_entropies: Vec<f64> = folds.iter().map(|f| f.mean_nll).collect();
    let entropy_mixture = fold_entropies.iter().sum::<f64>() / folds.len() as f64;
    let d_min_raw = entropy_mixture - fit_p.mean_nll.min(fit_q.mean_nll);
    let d_js_raw = entropy_mixture - 0.5 * (fit_p.mean_nll + fit_q.mean_nll);
    Ok(HDivergenceResult {
        d_min: clamp_nonnegative("H-Min", d_min_raw),
        d_js: clamp_nonnegative("H-Jensen-Shannon", d_js_raw),
        d_min_raw,
        d_js_raw,
        entropy_p: fit_p.mean_nll,
        entropy_q: fit_q.mean_nll,
        entropy_mixture,
        fold_entropies,
        bandwidth_p: fit_p.bandwidth,
        bandwidth_q: fit_q.bandwidth,
        fold_bandwidths: folds.iter().map(|f| f.bandwidth).collect(),
    })
}

fn holdout_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
}

fn clamp_nonnegative(name: &str, v: f64) -> f64 {
    if v < 0.0 {
        log::warn!("{name} divergence estimate {v:.4e} is negative; clamping to 0");
        0.0
    } else {
        v
    }
}

fn concat_rows(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let d = a.shape()[1];
    let mut data = a.to_vec();
    data.extend_from_slice(b.data());
    Tensor::matrix(data.len() / d, d, data)
}

/// Standardizes both sets with the mean and standard deviation of their
/// union. Constant columns are only centred.
fn standardize_jointly(p: &Tensor, q: &Tensor) -> Result<(Tensor, Tensor)> {
    let d = p.shape()[1];
    let n = (p.shape()[0] + q.shape()[0]) as f64;
    let rows = || p.data().chunks(d).chain(q.data().chunks(d));
    let mut mean = vec![0.0; d];
    for r in rows() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut sd = vec![0.0; d];
    for r in rows() {
        for ((s, v), m) in sd.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    for s in sd.iter_mut() {
        *s = s.sqrt();
        if !(*s > 1e-12) {
            *s = 1.0;
        }
    }
    let scale = |x: &Tensor| -> Result<Tensor> {
        let data = x
            .data()
            .chunks(d)
            .flat_map(|r| r.iter().zip(&mean).zip(&sd).map(|((v, m), s)| (v - m) / s))
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    };
    if !p.all_finite() || !q.all_finite() {
        return Err(Error::Numeric { op: "h_divergences" });
    }
    Ok((scale(p)?, scale(q)?))
}

/// Mean over samples `[n, p]` of `||theta - truth||^2 / p`.
pub fn mse_to_truth(samples: &Tensor, truth: &[f64]) -> Result<f64> {
    let (n, p) = samples.dims2("mse_to_truth")?;
    if p != truth.len() {
        return Err(Error::Shape {
            op: "mse_to_truth",
            detail: format!("samples have {p} columns, truth has {}", truth.len()),
        });
    }
    if n == 0 {
        return Err(Error::InvalidParameter("mse_to_truth needs at least one sample".into()));
    }
    let total: f64 = samples
        .data()
        .chunks(p)
        .map(|r| r.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p as f64)
        .sum();
    Ok(total / n as f64)
}
