use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// Eval rows processed per block during a bandwidth search; bounds the
/// distance buffer to `BLOCK * n` values.
const BLOCK: usize = 128;
/// Kernels further than this many nats below the nearest one are skipped.
const PRUNE: f64 = 50.0;

/// The bandwidth grid `0.1, 0.2, ..., 5.0`.
pub fn default_bandwidths() -> Vec<f64> {
    (1..=50).map(|i| i as f64 / 10.0).collect()
}

/// Isotropic Gaussian kernel density estimate.
#[derive(Debug, Clone)]
pub struct Kde {
    points: Tensor,
    bandwidth: f64,
}

impl Kde {
    pub fn new(points: Tensor, bandwidth: f64) -> Result<Self> {
        let (n, _) = points.dims2("kde")?;
        if n == 0 {
            return Err(Error::InvalidParameter("kde needs at least one support point".into()));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidParameter(format!("kde bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Self { points, bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn points(&self) -> &Tensor {
        &self.points
    }

    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        let d = self.points.shape()[1];
        if x.len() != d {
            return Err(Error::Shape {
                op: "kde",
                detail: format!("point has {} coordinates, kde has {d}", x.len()),
            });
        }
        let sq = sq_dists(x, &self.points);
        Ok(kernel_log_mean(&sq, self.bandwidth) - log_norm(d, self.bandwidth))
    }

    /// Log-density at every row of `x`.
    pub fn log_pdf_rows(&self, x: &Tensor) -> Result<Vec<f64>> {
        let (m, _) = check_dims(x, &self.points)?;
        Ok((0..m).into_par_iter().map(|i| self.log_pdf(x.row_slice(i)).expect("dims checked")).collect())
    }
}

/// `d * ln(bandwidth * sqrt(2 pi))`.
fn log_norm(d: usize, bandwidth: f64) -> f64 {
    d as f64 * (bandwidth * (2.0 * std::f64::consts::PI).sqrt()).ln()
}

fn sq_dists(x: &[f64], points: &Tensor) -> Vec<f64> {
    let d = x.len();
    points
        .data()
        .chunks(d)
        .map(|p| p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum())
        .collect()
}

/// `ln((1/n) sum_i exp(-sq_i / (2 h^2)))`.
fn kernel_log_mean(sq: &[f64], h: f64) -> f64 {
    let min = sq.iter().copied().fold(f64::INFINITY, f64::min);
    let inv = 0.5 / (h * h);
    let cutoff = min + PRUNE / inv;
    let s: f64 = sq.iter().filter(|&&v| v <= cutoff).map(|&v| (-(v - min) * inv).exp()).sum();
    -min * inv + s.ln() - (sq.len() as f64).ln()
}

fn check_dims(eval: &Tensor, sample: &Tensor) -> Result<(usize, usize)> {
    let (m, d) = eval.dims2("kde")?;
    let (_, ds) = sample.dims2("kde")?;
    if d != ds {
        return Err(Error::Shape {
            op: "kde",
            detail: format!("eval has {d} columns, sample has {ds}"),
        });
    }
    Ok((m, d))
}

/// Outcome of a bandwidth grid search.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeFit {
    pub bandwidth: f64,
    pub mean_nll: f64,
    /// Mean eval NLL at every grid bandwidth, in grid order.
    pub curve: Vec<(f64, f64)>,
}

/// Fits a KDE on `sample` for every bandwidth in `grid` and returns the one
/// with the smallest mean negative log-likelihood on `eval`. Ties go to the
/// earlier grid point.
pub fn kde_fit_nll(sample: &Tensor, eval: &Tensor, grid: &[f64]) -> Result<KdeFit> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("bandwidth grid is empty".into()));
    }
    if let Some(h) = grid.iter().find(|h| !(**h > 0.0 && h.is_finite())) {
        return Err(Error::InvalidParameter(format!("bandwidths must be positive, got {h}")));
    }
    let (m, d) = check_dims(eval, sample)?;
    let (n, _) = sample.dims2("kde")?;
    if n == 0 || m == 0 {
        return Err(Error::InvalidParameter("kde search needs non-empty sample and eval sets".into()));
    }
    let blocks: Vec<usize> = (0..m).step_by(BLOCK).collect();
    let sums = blocks
        .par_iter()
        .map(|&start| {
            let mut acc = vec![0.0; grid.len()];
            for i in start..(start + BLOCK).min(m) {
                let sq = sq_dists(eval.row_slice(i), sample);
                for (a, &h) in acc.iter_mut().zip(grid) {
                    *a += kernel_log_mean(&sq, h);
                }
            }
            acc
        })
        .reduce(|| vec![0.0; grid.len()], |a, b| a.iter().zip(&b).map(|(x, y)| x + y).collect());
    let curve: Vec<(f64, f64)> = grid
        .iter()
        .zip(&sums)
        .map(|(&h, &s)| (h, -(s / m as f64) + log_norm(d, h)))
        .collect();
    let (bandwidth, mean_nll) = curve
        .iter()
        .copied()
        .fold((f64::NAN, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best });
    if !mean_nll.is_finite() {
        return Err(Error::Numeric { op: "kde_fit_nll" });
    }
    Ok(KdeFit {
        bandwidth,
        mean_nll,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_matches_expected_points() {
        let g = default_bandwidths();
        assert_eq!(g.len(), 50);
        assert_eq!(g[0], 0.1);
        assert_eq!(g[49], 5.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = Tensor::matrix(2, 1, vec![0.0, 1.0]).unwrap();
        assert!(kde_fit_nll(&s, &s, &[]).is_err());
        assert!(kde_fit_nll(&s, &s, &[0.0]).is_err());
        let e = Tensor::matrix(1, 2, vec![0.0, 1.0]).unwrap();
        assert!(kde_fit_nll(&s, &e, &[1.0]).is_err());
        assert!(Kde::new(s, -1.0).is_err());
    }

    #[test]
    fn pruning_keeps_far_kernels_negligible() {
        // one kernel at distance 0 and one very far: density equals half the near kernel
        let s = Tensor::matrix(2, 1, vec![0.0, 100.0]).unwrap();
        let kde = Kde::new(s, 0.5).unwrap();
        let expected = 0.5f64.ln() - 0.5 * (2.0 * std::f64::consts::PI * 0.25).ln();
        assert!((kde.log_pdf(&[0.0]).unwrap() - expected).abs() < 1e-12);
    }
}
