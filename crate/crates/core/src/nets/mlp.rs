use serde::{Deserialize, Serialize};

use super::{bind, glorot};
use crate::error::{Error, Result};
use crate::numeric::{Rng, Tape, Tensor, Var};

/// Affine-tanh stack with a linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    widths: Vec<usize>,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
}

impl Mlp {
    /// `widths = [input, hidden..., output]`.
    pub fn new(widths: &[usize], rng: &mut Rng) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidParameter(format!(
                "MLP widths must be at least [in, out] and non-zero, got {widths:?}"
            )));
        }
        let weights = widths.windows(2).map(|w| glorot(rng, w[0], w[1])).collect();
        let biases = widths[1..].iter().map(|&w| Tensor::zeros(vec![w])).collect();
        Ok(Self {
            widths: widths.to_vec(),
            weights,
            biases,
        })
    }

    pub fn from_parts(weights: Vec<Tensor>, biases: Vec<Tensor>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::InvalidParameter("MLP needs one bias per weight".into()));
        }
        let mut widths = vec![weights[0].dims2("mlp")?.0];
        for (w, b) in weights.iter().zip(&biases) {
            let (fi, fo) = w.dims2("mlp")?;
            if fi != *widths.last().unwrap() || b.len() != fo {
                return Err(Error::shape("mlp", "consecutive layer dims do not chain"));
            }
            widths.push(fo);
        }
        Ok(Self {
            widths,
            weights,
            biases,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Tensor::len).sum()
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        self.weights.iter().chain(&self.biases).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.weights.iter_mut().chain(self.biases.iter_mut()).collect()
    }

    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundMlp<'t> {
        BoundMlp {
            weights: self.weights.iter().map(|w| bind(tape, w, trainable)).collect(),
            biases: self.biases.iter().map(|b| bind(tape, b, trainable)).collect(),
        }
    }

    /// Forward pass for a `[n, input]` batch without gradient tracking.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let net = self.bind(&tape, false);
        let out = net.forward(tape.constant(x.clone()))?;
        Ok(out.value())
    }
}

/// An [`Mlp`] whose parameters live on a tape.
#[derive(Debug, Clone)]
pub struct BoundMlp<'t> {
    weights: Vec<Var<'t>>,
    biases: Vec<Var<'t>>,
}

impl<'t> BoundMlp<'t> {
    pub fn parameters(&self) -> Vec<Var<'t>> {
        self.weights.iter().chain(&self.biases).copied().collect()
    }

    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        let last = self.weights.len() - 1;
        let mut h = x;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            h = h.matmul(*w)?.add_row(*b)?;
            if l < last {
                h = h.tanh()?;
            }
        }
        Ok(h)
    }
}
