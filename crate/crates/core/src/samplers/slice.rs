//! Coordinate-wise slice sampling with stepping out and shrinkage.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ChainSet, TargetDensity};
use crate::error::{Error, Result};
use crate::numeric::Rng;

/// Shrinkage iterations after which a slice is declared collapsed.
const MAX_SHRINK: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SliceConfig {
    pub n_chains: usize,
    pub n_steps: usize,
    pub burn_in: usize,
    /// Upper bound on the number of width-`w` expansions of a slice.
    pub max_step_out: usize,
}

impl Default for SliceConfig {
    fn default() -> Self {
        Self {
            n_chains: 4,
            n_steps: 10_000,
            burn_in: 5_000,
            max_step_out: 50,
        }
    }
}

impl SliceConfig {
    /// Long-run settings used for reference posteriors.
    pub fn reference() -> Self {
        Self {
            n_chains: 10,
            n_steps: 20_000,
            burn_in: 10_000,
            max_step_out: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 || self.burn_in >= self.n_steps || self.max_step_out == 0 {
            return Err(Error::InvalidParameter(format!(
                "slice config needs n_chains >= 1, burn_in < n_steps and max_step_out >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Run `cfg.n_chains` chains started at the constrained points `inits`,
/// with per-coordinate initial slice widths `widths` in unconstrained space.
pub fn slice_sample(
    target: &TargetDensity<'_>,
    inits: &[Vec<f64>],
    widths: &[f64],
    cfg: &SliceConfig,
    rng: &mut Rng,
) -> Result<ChainSet> {
    cfg.validate()?;
    let p = target.dim();
    if inits.len() != cfg.n_chains {
        return Err(Error::InvalidParameter(format!(
            "{} initial points for {} chains",
            inits.len(),
            cfg.n_chains
        )));
    }
    if widths.len() != p || widths.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
        return Err(Error::InvalidParameter(format!("slice widths must be {p} positive values")));
    }
    let base = rng.fork();
    let chains = (0..cfg.n_chains)
        .into_par_iter()
        .map(|c| {
            let mut crng = base.derive(&[c as u64]);
            run_chain(target, &inits[c], widths, cfg, &mut crng)
        })
        .collect::<Result<Vec<_>>>()?;
    let (draws, evals): (Vec<_>, Vec<_>) = chains.into_iter().unzip();
    Ok(ChainSet::new(
        p,
        cfg.n_steps,
        cfg.burn_in,
        draws,
        evals.into_iter().sum(),
    ))
}

fn run_chain(
    target: &TargetDensity<'_>,
    init: &[f64],
    widths: &[f64],
    cfg: &SliceConfig,
    rng: &mut Rng,
) -> Result<(Vec<f64>, u64)> {
    let p = target.dim();
    if init.len() != p {
        return Err(Error::shape("slice_sample", format!("initial point has {} values, target dim {p}", init.len())));
    }
    let mut u = target.to_unconstrained(init);
    let mut evals = 0u64;
    let eval = |u: &[f64], evals: &mut u64| {
        *evals += 1;
        let v = target.log_density_unconstrained(u);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };
    let mut lp = eval(&u, &mut evals);
    if !lp.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "target is not finite at initial point {init:?}"
        )));
    }
    let kept = cfg.n_steps - cfg.burn_in;
    let mut out = Vec::with_capacity(kept * p);
    for step in 0..cfg.n_steps {
        for &i in &rng.permutation(p) {
            let x0 = u[i];
            let level = lp - exponential(rng);
            let w = widths[i];
            let mut lo = x0 - w * rng.uniform();
            let mut hi = lo + w;
            let mut j = (cfg.max_step_out as f64 * rng.uniform()).floor() as usize;
            let mut k = cfg.max_step_out - 1 - j;
            while j > 0 {
                u[i] = lo;
                if eval(&u, &mut evals) <= level {
                    break;
                }
                lo -= w;
                j -= 1;
            }
            while k > 0 {
                u[i] = hi;
                if eval(&u, &mut evals) <= level {
                    break;
                }
                hi += w;
                k -= 1;
            }
            let mut accepted = false;
            for _ in 0..MAX_SHRINK {
                let x1 = lo + (hi - lo) * rng.uniform();
                u[i] = x1;
                let l1 = eval(&u, &mut evals);
                if l1 > level {
                    lp = l1;
                    accepted = true;
                    break;
                }
                if x1 < x0 {
                    lo = x1;
                } else {
                    hi = x1;
                }
            }
            if !accepted {
                return Err(Error::SliceCollapsed { coordinate: i });
            }
        }
        if step >= cfg.burn_in {
            out.extend(target.to_constrained(&u));
        }
    }
    Ok((out, evals))
}

fn exponential(rng: &mut Rng) -> f64 {
    -rng.uniform_open().ln()
}
