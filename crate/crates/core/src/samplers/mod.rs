//! MCMC over model parameters for unnormalized posteriors.
//!
//! Targets are defined on the constrained parameter space and sampled in
//! an unconstrained reparameterization given by per-coordinate
//! [`SupportTransform`]s; draws are reported back in constrained space.

mod slice;
mod transform;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use slice::{slice_sample, SliceConfig};
pub use transform::SupportTransform;

use crate::error::{Error, Result};
use crate::numeric::Tensor;

type LogDensityFn<'a> = dyn Fn(&[f64]) -> f64 + Sync + 'a;

/// Unnormalized log-density over constrained parameters, sampled through
/// per-coordinate support transforms.
pub struct TargetDensity<'a> {
    transforms: Vec<SupportTransform>,
    log_density: Box<LogDensityFn<'a>>,
}

impl<'a> TargetDensity<'a> {
    /// `log_density` receives constrained parameters and may return
    /// `-inf` outside the support.
    pub fn new(transforms: Vec<SupportTransform>, log_density: impl Fn(&[f64]) -> f64 + Sync + 'a) -> Self {
        Self {
            transforms,
            log_density: Box::new(log_density),
        }
    }

    pub fn dim(&self) -> usize {
        self.transforms.len()
    }

    pub fn transforms(&self) -> &[SupportTransform] {
        &self.transforms
    }

    pub fn to_unconstrained(&self, theta: &[f64]) -> Vec<f64> {
        self.transforms.iter().zip(theta).map(|(t, &v)| t.to_unconstrained(v)).collect()
    }

    pub fn to_constrained(&self, u: &[f64]) -> Vec<f64> {
        self.transforms.iter().zip(u).map(|(t, &v)| t.to_constrained(v)).collect()
    }

    pub fn log_density(&self, theta: &[f64]) -> f64 {
        (self.log_density)(theta)
    }

    /// Log-density of the unconstrained variables, including the transform
    /// log-Jacobian.
    pub fn log_density_unconstrained(&self, u: &[f64]) -> f64 {
        let theta = self.to_constrained(u);
        let lj: f64 = self.transforms.iter().zip(u).map(|(t, &v)| t.log_jacobian(v)).sum();
        let lp = (self.log_density)(&theta);
        if lp == f64::NEG_INFINITY {
            lp
        } else {
            lp + lj
        }
    }
}

/// Retained draws of several chains, in constrained space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSet {
    dim: usize,
    n_steps: usize,
    burn_in: usize,
    /// Per chain, row-major `[n_steps - burn_in, dim]`.
    chains: Vec<Vec<f64>>,
    n_evaluations: u64,
}

impl ChainSet {
    pub fn new(dim: usize, n_steps: usize, burn_in: usize, chains: Vec<Vec<f64>>, n_evaluations: u64) -> Self {
        Self {
            dim,
            n_steps,
            burn_in,
            chains,
            n_evaluations,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in
    }

    pub fn n_evaluations(&self) -> u64 {
        self.n_evaluations
    }

    /// Retained draws per chain.
    pub fn draws_per_chain(&self) -> usize {
        self.chains.first().map_or(0, |c| c.len() / self.dim.max(1))
    }

    pub fn n_retained(&self) -> usize {
        self.n_chains() * self.draws_per_chain()
    }

    pub fn chain(&self, c: usize) -> &[f64] {
        &self.chains[c]
    }

    /// Draws of coordinate `j` in chain `c`.
    pub fn trace(&self, c: usize, j: usize) -> Vec<f64> {
        self.chains[c].iter().skip(j).step_by(self.dim).copied().collect()
    }

    /// All retained draws, chains concatenated, as `[n, dim]`.
    pub fn pooled(&self) -> Tensor {
        let data: Vec<f64> = self.chains.iter().flatten().copied().collect();
        Tensor::matrix(self.n_retained(), self.dim, data).expect("chain shape")
    }

    /// Draw `i` of the pooled sample.
    pub fn draw(&self, i: usize) -> &[f64] {
        let per = self.draws_per_chain();
        let (c, r) = (i / per, i % per);
        &self.chains[c][r * self.dim..(r + 1) * self.dim]
    }

    pub fn means(&self) -> Vec<f64> {
        let n = self.n_retained() as f64;
        let mut m = vec![0.0; self.dim];
        for row in self.chains.iter().flat_map(|c| c.chunks(self.dim)) {
            for (a, b) in m.iter_mut().zip(row) {
                *a += b / n;
            }
        }
        m
    }

    pub fn variances(&self) -> Vec<f64> {
        let m = self.means();
        let n = self.n_retained() as f64;
        let mut v = vec![0.0; self.dim];
        for row in self.chains.iter().flat_map(|c| c.chunks(self.dim)) {
            for j in 0..self.dim {
                v[j] += (row[j] - m[j]).powi(2);
            }
        }
        v.iter().map(|s| s / (n - 1.0)).collect()
    }

    /// CSV with columns `chain, step, theta_1..theta_p`; `step` counts from
    /// the start of the chain including burn-in.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["chain".to_string(), "step".to_string()];
        header.extend((1..=self.dim).map(|j| format!("theta_{j}")));
        w.write_record(&header)?;
        for (c, chain) in self.chains.iter().enumerate() {
            for (r, row) in chain.chunks(self.dim).enumerate() {
                let mut rec = vec![c.to_string(), (self.burn_in + r).to_string()];
                rec.extend(row.iter().map(|v| v.to_string()));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> PosteriorSummary {
        let rhat = split_rhat(self).ok();
        PosteriorSummary {
            n_chains: self.n_chains(),
            n_steps: self.n_steps,
            burn_in: self.burn_in,
            n_retained: self.n_retained(),
            means: self.means(),
            variances: self.variances(),
            rhat,
            n_evaluations: self.n_evaluations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub n_chains: usize,
    pub n_steps: usize,
    pub burn_in: usize,
    pub n_retained: usize,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    /// Absent when the diagnostic is undefined (degenerate chains).
    pub rhat: Option<Vec<f64>>,
    pub n_evaluations: u64,
}

/// Load posterior draws from a CSV; `theta_*` columns are used and any
/// `chain`/`step` columns are ignored.
pub fn read_samples_csv(path: &Path) -> Result<Tensor> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let cols: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("theta_"))
        .map(|(i, _)| i)
        .collect();
    let p = cols.len();
    for j in 1..=p {
        let name = format!("theta_{j}");
        if !header.iter().any(|h| h == name) {
            return Err(Error::Parse(format!("{}: missing column `{name}`", path.display())));
        }
    }
    if p == 0 {
        return Err(Error::Parse(format!("{}: missing column `theta_1`", path.display())));
    }
    let order: Vec<usize> = (1..=p)
        .map(|j| header.iter().position(|h| h == format!("theta_{j}")).unwrap())
        .collect();
    let mut data = Vec::new();
    let mut n = 0;
    for rec in r.records() {
        let rec = rec?;
        for &c in &order {
            let s = rec.get(c).unwrap_or("");
            data.push(
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("{}: {s:?}: {e}", path.display())))?,
            );
        }
        n += 1;
    }
    Tensor::matrix(n, p, data)
}

/// Split potential scale reduction factor per coordinate.
pub fn split_rhat(chains: &ChainSet) -> Result<Vec<f64>> {
    (0..chains.dim())
        .map(|j| {
            let traces: Vec<Vec<f64>> = (0..chains.n_chains()).map(|c| chains.trace(c, j)).collect();
            split_rhat_traces(&traces).map_err(|e| match e {
                Error::Diagnostic(m) => Error::Diagnostic(format!("coordinate {j}: {m}")),
                other => other,
            })
        })
        .collect()
}

/// Split-R̂ of one scalar quantity observed in several chains.
pub fn split_rhat_traces(traces: &[Vec<f64>]) -> Result<f64> {
    if traces.len() < 2 {
        return Err(Error::Diagnostic(format!("split R-hat needs at least 2 chains, got {}", traces.len())));
    }
    let n_min = traces.iter().map(Vec::len).min().unwrap_or(0);
    if n_min < 4 {
        return Err(Error::Diagnostic(format!("split R-hat needs at least 4 draws per chain, got {n_min}")));
    }
    let half = n_min / 2;
    let mut halves: Vec<&[f64]> = Vec::with_capacity(2 * traces.len());
    for t in traces {
        let t = &t[..n_min];
        halves.push(&t[..half]);
        halves.push(&t[n_min - half..]);
    }
    let n = half as f64;
    let m = halves.len() as f64;
    let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / n).collect();
    let vars: Vec<f64> = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| h.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0))
        .collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>();
    let w = vars.iter().sum::<f64>() / m;
    if !(w > 0.0) || !w.is_finite() {
        return Err(Error::Diagnostic("degenerate chains with zero within-chain variance".into()));
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    Ok((var_plus / w).sqrt())
}
