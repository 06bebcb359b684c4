//! Affine masked autoregressive layer.
//!
//! Inverse (density) direction: `z_i = (y_i - mu_i(y_<i, c)) * exp(-s_i(y_<i, c))`,
//! one parallel pass. Forward (sampling) direction: `y_i = mu_i + exp(s_i) z_i`,
//! one conditioner pass per coordinate. Raw log-scales are soft-clamped to
//! `S_MAX * tanh(s / S_MAX)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{BoundMade, Made};
use crate::numeric::{Rng, Tape, Tensor, Var};

pub const S_MAX: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMaf {
    dim: usize,
    conditioner: Made,
}

impl AffineMaf {
    pub fn new(dim: usize, d_context: usize, hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        let order: Vec<usize> = (0..dim).collect();
        Ok(Self {
            dim,
            conditioner: Made::new(dim, hidden, d_context, &order, rng)?,
        })
    }

    pub fn from_conditioner(conditioner: Made) -> Self {
        Self {
            dim: conditioner.d_in(),
            conditioner,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn d_context(&self) -> usize {
        self.conditioner.d_context()
    }

    pub fn conditioner(&self) -> &Made {
        &self.conditioner
    }

    pub fn conditioner_mut(&mut self) -> &mut Made {
        &mut self.conditioner
    }

    pub fn n_params(&self) -> usize {
        self.conditioner.n_params()
    }

    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundMaf<'t> {
        BoundMaf {
            dim: self.dim,
            net: self.conditioner.bind(tape, trainable),
        }
    }

    /// `(z, log|det dz/dy|)` for a `[n, dim]` batch; `log_det` is `[n, 1]`.
    pub fn inverse(&self, y: &Tensor, context: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        let tape = Tape::new();
        let layer = self.bind(&tape, false);
        let ctx = context.map(|c| tape.constant(c.clone()));
        let (z, ld) = layer.inverse(tape.constant(y.clone()), ctx)?;
        Ok((z.value(), ld.value()))
    }

    /// Sequential generation of `y` from `z`.
    pub fn forward(&self, z: &Tensor, context: Option<&Tensor>) -> Result<Tensor> {
        let (n, d) = z.dims2("maf_forward")?;
        if d != self.dim {
            return Err(Error::shape("maf_forward", format!("{d} columns for dim {}", self.dim)));
        }
        let order = order_by_degree(self.conditioner.input_degrees());
        let zd = z.data();
        let mut y = vec![0.0; n * d];
        for &i in &order {
            let yt = Tensor::matrix(n, d, y.clone())?;
            let (mu, s) = self.conditioner.forward(&yt, context)?;
            for r in 0..n {
                let k = r * d + i;
                let scale = clamp_scale(s.data()[k]).exp();
                y[k] = mu.data()[k] + scale * zd[k];
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric { op: "maf_forward" });
        }
        Tensor::matrix(n, d, y)
    }

    /// Draw `n` samples with a standard-normal base (used in tests and demos).
    pub fn sample(&self, n: usize, context: Option<&Tensor>, rng: &mut Rng) -> Result<Tensor> {
        let z = (0..n * self.dim).map(|_| rng.normal()).collect();
        self.forward(&Tensor::matrix(n, self.dim, z)?, context)
    }
}

pub(crate) fn clamp_scale(s: f64) -> f64 {
    S_MAX * (s / S_MAX).tanh()
}

fn order_by_degree(degrees: &[usize]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..degrees.len()).collect();
    idx.sort_by_key(|&i| degrees[i]);
    idx
}

#[derive(Debug, Clone)]
pub struct BoundMaf<'t> {
    dim: usize,
    net: BoundMade<'t>,
}

impl<'t> BoundMaf<'t> {
    pub fn parameters(&self) -> Vec<Var<'t>> {
        self.net.parameters()
    }

    pub fn inverse(&self, y: Var<'t>, context: Option<Var<'t>>) -> Result<(Var<'t>, Var<'t>)> {
        debug_assert_eq!(y.shape().get(1), Some(&self.dim));
        let (mu, s_raw) = self.net.forward(y, context)?;
        let s = s_raw.scale(1.0 / S_MAX)?.tanh()?.scale(S_MAX)?;
        let z = y.sub(mu)?.mul(s.neg()?.exp()?)?;
        let log_det = s.sum_cols()?.neg()?;
        Ok((z, log_det))
    }
}
