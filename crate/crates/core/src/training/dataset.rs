//! Simulated `(y, theta)` pairs.

use std::path::Path;

use crate::error::{Error, Result};
use crate::flows::Standardizer;
use crate::numeric::{Rng, Tensor};

/// Scales below this are treated as constant columns and left unscaled.
const MIN_SCALE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y_dim: usize,
    theta_dim: usize,
    y: Vec<f64>,
    theta: Vec<f64>,
}

impl Dataset {
    pub fn new(y_dim: usize, theta_dim: usize) -> Self {
        Self {
            y_dim,
            theta_dim,
            y: Vec::new(),
            theta: Vec::new(),
        }
    }

    pub fn from_tensors(y: &Tensor, theta: &Tensor) -> Result<Self> {
        let (n, d) = y.dims2("dataset")?;
        let (nt, p) = theta.dims2("dataset")?;
        if n != nt {
            return Err(Error::shape("dataset", format!("{n} observations but {nt} parameter rows")));
        }
        Ok(Self {
            y_dim: d,
            theta_dim: p,
            y: y.to_vec(),
            theta: theta.to_vec(),
        })
    }

    pub fn push(&mut self, y: &[f64], theta: &[f64]) -> Result<()> {
        if y.len() != self.y_dim || theta.len() != self.theta_dim {
            return Err(Error::shape(
                "dataset_push",
                format!("pair ({}, {}) vs dims ({}, {})", y.len(), theta.len(), self.y_dim, self.theta_dim),
            ));
        }
        self.y.extend_from_slice(y);
        self.theta.extend_from_slice(theta);
        Ok(())
    }

    pub fn extend(&mut self, other: &Dataset) -> Result<()> {
        if other.y_dim != self.y_dim || other.theta_dim != self.theta_dim {
            return Err(Error::shape("dataset_extend", "datasets have different dims"));
        }
        self.y.extend_from_slice(&other.y);
        self.theta.extend_from_slice(&other.theta);
        Ok(())
    }

    pub fn len(&self) -> usize {
        if self.y_dim > 0 {
            self.y.len() / self.y_dim
        } else {
            self.theta.len() / self.theta_dim.max(1)
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn y_dim(&self) -> usize {
        self.y_dim
    }

    pub fn theta_dim(&self) -> usize {
        self.theta_dim
    }

    pub fn y_row(&self, i: usize) -> &[f64] {
        &self.y[i * self.y_dim..(i + 1) * self.y_dim]
    }

    pub fn theta_row(&self, i: usize) -> &[f64] {
        &self.theta[i * self.theta_dim..(i + 1) * self.theta_dim]
    }

    pub fn y(&self) -> Tensor {
        Tensor::matrix(self.len(), self.y_dim, self.y.clone()).expect("dataset shape")
    }

    pub fn theta(&self) -> Tensor {
        Tensor::matrix(self.len(), self.theta_dim, self.theta.clone()).expect("dataset shape")
    }

    /// `(y, theta)` matrices for the given row indices.
    pub fn rows(&self, idx: &[usize]) -> Result<(Tensor, Tensor)> {
        let n = self.len();
        let mut y = Vec::with_capacity(idx.len() * self.y_dim);
        let mut t = Vec::with_capacity(idx.len() * self.theta_dim);
        for &i in idx {
            if i >= n {
                return Err(Error::shape("dataset_rows", format!("row {i} out of {n}")));
            }
            y.extend_from_slice(self.y_row(i));
            t.extend_from_slice(self.theta_row(i));
        }
        Ok((
            Tensor::matrix(idx.len(), self.y_dim, y)?,
            Tensor::matrix(idx.len(), self.theta_dim, t)?,
        ))
    }

    /// Disjoint `(train, validation)` index sets from a seeded shuffle.
    pub fn split(&self, val_fraction: f64, rng: &mut Rng) -> Result<(Vec<usize>, Vec<usize>)> {
        let n = self.len();
        let n_val = ((val_fraction * n as f64).round() as usize).max(1);
        if n < 2 || n_val >= n {
            return Err(Error::InvalidParameter(format!(
                "cannot split {n} pairs with validation fraction {val_fraction}"
            )));
        }
        let perm = rng.permutation(n);
        let val = perm[..n_val].to_vec();
        let train = perm[n_val..].to_vec();
        Ok((train, val))
    }

    /// Per-coordinate mean and standard deviation over the given rows.
    pub fn standardizer(&self, idx: &[usize]) -> Standardizer {
        let (y_shift, y_scale) = column_stats(idx.iter().map(|&i| self.y_row(i)), self.y_dim);
        let (ctx_shift, ctx_scale) = column_stats(idx.iter().map(|&i| self.theta_row(i)), self.theta_dim);
        Standardizer {
            y_shift,
            y_scale,
            ctx_shift,
            ctx_scale,
        }
    }

    /// CSV with columns `y_1..y_D, theta_1..theta_p`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let header: Vec<String> = (1..=self.y_dim)
            .map(|i| format!("y_{i}"))
            .chain((1..=self.theta_dim).map(|i| format!("theta_{i}")))
            .collect();
        w.write_record(&header)?;
        for i in 0..self.len() {
            let rec: Vec<String> = self
                .y_row(i)
                .iter()
                .chain(self.theta_row(i))
                .map(|v| v.to_string())
                .collect();
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        let y_dim = header.iter().filter(|h| h.starts_with("y_")).count();
        let theta_dim = header.iter().filter(|h| h.starts_with("theta_")).count();
        if y_dim + theta_dim != header.len() {
            return Err(Error::Parse(format!("unexpected dataset columns in {}", path.display())));
        }
        let mut out = Self::new(y_dim, theta_dim);
        for rec in r.records() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("{s:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            out.push(&vals[..y_dim], &vals[y_dim..])?;
        }
        Ok(out)
    }
}

fn column_stats<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut n = 0.0;
    let mut mean = vec![0.0; dim];
    let mut m2 = vec![0.0; dim];
    for row in rows {
        n += 1.0;
        for c in 0..dim {
            let d = row[c] - mean[c];
            mean[c] += d / n;
            m2[c] += d * (row[c] - mean[c]);
        }
    }
    let scale = m2
        .iter()
        .map(|&s| {
            let sd = if n > 1.0 { (s / (n - 1.0)).sqrt() } else { 0.0 };
            if sd.is_finite() && sd > MIN_SCALE {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}
