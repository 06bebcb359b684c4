//! Maximum-likelihood fitting of a [`FlowStack`] to simulated `(y, theta)`
//! pairs.
//!
//! Training minimizes the mean negative log-density over shuffled
//! mini-batches with Adam, keeps a held-out validation split, stops once the
//! validation loss has not improved for `patience` epochs and returns the
//! parameters of the best validation epoch.

mod adam;
mod dataset;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use dataset::Dataset;

use crate::error::{Error, Result};
use crate::flows::FlowStack;
use crate::numeric::{Rng, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 100,
            max_epochs: 2000,
            patience: 10,
            val_fraction: 0.1,
            clip_norm: Some(10.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(format!("train config: {m}")));
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must lie in (0, 1)");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad("clip_norm must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_nll: f64,
    pub val_nll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_nll: f64,
    pub stopped_early: bool,
    pub n_train: usize,
    pub n_val: usize,
    pub trace: Vec<EpochRecord>,
}

impl TrainReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Per-epoch trace as CSV with columns `epoch,train_nll,val_nll`.
    pub fn write_trace_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "train_nll", "val_nll"])?;
        for r in &self.trace {
            w.write_record([r.epoch.to_string(), r.train_nll.to_string(), r.val_nll.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_json()?.as_bytes())?;
        Ok(())
    }
}

/// Fit `stack` to `data`. The returned stack carries the best-validation
/// parameters and the standardization statistics of the training split.
pub fn train(
    mut stack: FlowStack,
    data: &Dataset,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<(FlowStack, TrainReport)> {
    cfg.validate()?;
    if data.y_dim() != stack.input_dim() || data.theta_dim() != stack.context_dim() {
        return Err(Error::shape(
            "train",
            format!(
                "dataset dims ({}, {}) vs flow ({}, {})",
                data.y_dim(),
                data.theta_dim(),
                stack.input_dim(),
                stack.context_dim()
            ),
        ));
    }
    let (train_idx, val_idx) = data.split(cfg.val_fraction, rng)?;
    stack.set_standardizer(data.standardizer(&train_idx))?;
    let (val_y, val_theta) = data.rows(&val_idx)?;

    let mut adam = Adam::new(&stack.parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2);
    let mut best = stack.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut trace = Vec::new();
    let mut order = train_idx.clone();

    for epoch in 1..=cfg.max_epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (y, theta) = data.rows(chunk)?;
            let diverged = |_| Error::TrainingDiverged { epoch, batch: b + 1 };
            let (loss, grads) = batch_loss_and_grads(&stack, &y, &theta).map_err(diverged)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.all_finite()) {
                return Err(Error::TrainingDiverged { epoch, batch: b + 1 });
            }
            loss_sum += loss * chunk.len() as f64;
            let grads = match cfg.clip_norm {
                Some(c) => clip_global_norm(grads, c),
                None => grads,
            };
            adam.step(&mut stack.parameters_mut(), &grads);
        }
        let train_nll = loss_sum / order.len() as f64;
        let val_nll = mean_nll(&stack, &val_y, &val_theta)
            .map_err(|_| Error::TrainingDiverged { epoch, batch: 0 })?;
        trace.push(EpochRecord { epoch, train_nll, val_nll });
        log::debug!("epoch {epoch}: train {train_nll:.5} val {val_nll:.5}");

        if val_nll < best_val {
            best_val = val_nll;
            best_epoch = epoch;
            best = stack.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    let epochs_run = trace.len();
    let report = TrainReport {
        epochs_run,
        best_epoch,
        best_val_nll: best_val,
        stopped_early: epochs_run < cfg.max_epochs,
        n_train: train_idx.len(),
        n_val: val_idx.len(),
        trace,
    };
    Ok((best, report))
}

fn batch_loss_and_grads(stack: &FlowStack, y: &Tensor, theta: &Tensor) -> Result<(f64, Vec<Tensor>)> {
    let tape = Tape::new();
    let bound = stack.bind(&tape, true);
    let loss = bound.log_prob(y, theta)?.mean()?.neg()?;
    let grads = tape.backward(loss)?;
    let g = bound.parameters().into_iter().map(|p| grads.wrt(p)).collect();
    Ok((loss.value().item()?, g))
}

/// Mean negative log-density of the rows of `y` under `stack`.
pub fn mean_nll(stack: &FlowStack, y: &Tensor, theta: &Tensor) -> Result<f64> {
    let lp = stack.log_prob(y, theta)?;
    let n = lp.len() as f64;
    let v = -lp.data().iter().sum::<f64>() / n;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric { op: "mean_nll" })
    }
}

/// Rescale gradients so their joint Euclidean norm is at most `max_norm`.
pub fn clip_global_norm(grads: Vec<Tensor>, max_norm: f64) -> Vec<Tensor> {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm <= max_norm {
        return grads;
    }
    let f = max_norm / norm;
    grads.into_iter().map(|g| g.map(|v| v * f)).collect()
}

/// Retained fraction whose report has the lowest best-validation loss; ties
/// go to the larger fraction.
pub fn select_reduction(reports: &[(f64, TrainReport)]) -> Result<f64> {
    let mut best: Option<(f64, f64)> = None;
    for (fraction, r) in reports {
        let v = r.best_val_nll;
        best = match best {
            None => Some((*fraction, v)),
            Some((bf, bv)) if v < bv || (v == bv && *fraction > bf) => Some((*fraction, v)),
            keep => keep,
        };
    }
    best.map(|(f, _)| f)
        .ok_or_else(|| Error::InvalidParameter("select_reduction needs at least one report".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(v: f64) -> TrainReport {
        TrainReport {
            epochs_run: 1,
            best_epoch: 1,
            best_val_nll: v,
            stopped_early: false,
            n_train: 0,
            n_val: 0,
            trace: vec![],
        }
    }

    #[test]
    fn selects_lowest_validation_loss() {
        let r = [(0.25, report(1.0)), (0.5, report(0.7)), (0.75, report(0.9))];
        assert_eq!(select_reduction(&r).unwrap(), 0.5);
    }

    #[test]
    fn ties_go_to_larger_fraction() {
        let r = [(0.25, report(0.5)), (0.75, report(0.5))];
        assert_eq!(select_reduction(&r).unwrap(), 0.75);
        let r = [(0.75, report(0.5)), (0.25, report(0.5))];
        assert_eq!(select_reduction(&r).unwrap(), 0.75);
    }

    #[test]
    fn single_and_empty() {
        assert_eq!(select_reduction(&[(0.25, report(3.0))]).unwrap(), 0.25);
        assert!(select_reduction(&[]).is_err());
    }

    #[test]
    fn clipping_caps_joint_norm() {
        let g = vec![Tensor::vector(vec![3.0, 0.0]), Tensor::vector(vec![4.0])];
        let c = clip_global_norm(g.clone(), 1.0);
        let n: f64 = c.iter().flat_map(|t| t.data().iter()).map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
        assert_eq!(clip_global_norm(g.clone(), 10.0), g);
    }

    #[test]
    fn config_rejects_bad_split() {
        let mut c = TrainConfig::default();
        c.val_fraction = 1.0;
        assert!(c.validate().is_err());
        c.val_fraction = 0.0;
        assert!(c.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
