//! Masked autoencoder for distribution estimation (MADE) used as an
//! autoregressive conditioner.
//!
//! Each data input carries a degree `1..=d_in` given by the autoregressive
//! order; context inputs carry degree 0 and are therefore visible to every
//! unit. Hidden units take degrees cycling through `0..d_in`, and a hidden
//! connection exists iff `degree_out >= degree_in`. The output layer uses the
//! strict rule `degree_out > degree_in`, so the shift and log-scale of a
//! coordinate only see coordinates earlier in the order (and the context).
//! Degree-0 hidden units see nothing but the context, which gives every
//! output, including the first coordinate, a path from the context.

use serde::{Deserialize, Serialize};

use super::{bind, glorot};
use crate::error::{Error, Result};
use crate::numeric::{Rng, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Made {
    d_in: usize,
    d_context: usize,
    hidden: Vec<usize>,
    input_degrees: Vec<usize>,
    masks: Vec<Tensor>,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
}

impl Made {
    /// Build a MADE emitting `2 * d_in` values (shifts then log-scales).
    ///
    /// `order` lists input indices in autoregressive order; `order[0]` is the
    /// coordinate that depends on nothing but the context.
    pub fn new(
        d_in: usize,
        hidden: &[usize],
        d_context: usize,
        order: &[usize],
        rng: &mut Rng,
    ) -> Result<Self> {
        if d_in == 0 {
            return Err(Error::InvalidParameter("MADE needs d_in >= 1".into()));
        }
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::InvalidParameter(format!(
                "MADE hidden widths must be non-empty and >= 1, got {hidden:?}"
            )));
        }
        let mut input_degrees = vec![0usize; d_in];
        let mut seen = vec![false; d_in];
        if order.len() != d_in {
            return Err(Error::InvalidParameter(format!(
                "order has {} entries for {d_in} inputs",
                order.len()
            )));
        }
        for (k, &i) in order.iter().enumerate() {
            if i >= d_in || seen[i] {
                return Err(Error::InvalidParameter(format!(
                    "order {order:?} is not a permutation"
                )));
            }
            seen[i] = true;
            input_degrees[i] = k + 1;
        }

        let mut prev: Vec<usize> = input_degrees
            .iter()
            .copied()
            .chain(std::iter::repeat_n(0, d_context))
            .collect();
        let mut masks = Vec::with_capacity(hidden.len() + 1);
        let mut weights = Vec::with_capacity(hidden.len() + 1);
        let mut biases = Vec::with_capacity(hidden.len() + 1);

        for &width in hidden {
            let degrees: Vec<usize> = (0..width).map(|u| u % d_in).collect();
            let mask = mask_matrix(&prev, &degrees, |o, i| o >= i);
            weights.push(masked(glorot(rng, prev.len(), width), &mask));
            masks.push(mask);
            biases.push(Tensor::zeros(vec![width]));
            prev = degrees;
        }
        let out_degrees: Vec<usize> = input_degrees.iter().chain(&input_degrees).copied().collect();
        let mask = mask_matrix(&prev, &out_degrees, |o, i| o > i);
        weights.push(masked(glorot(rng, prev.len(), 2 * d_in), &mask));
        masks.push(mask);
        biases.push(Tensor::zeros(vec![2 * d_in]));

        Ok(Self {
            d_in,
            d_context,
            hidden: hidden.to_vec(),
            input_degrees,
            masks,
            weights,
            biases,
        })
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_context(&self) -> usize {
        self.d_context
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn input_degrees(&self) -> &[usize] {
        &self.input_degrees
    }

    pub fn masks(&self) -> &[Tensor] {
        &self.masks
    }

    /// Trainable parameters: unmasked weights plus biases.
    pub fn n_params(&self) -> usize {
        let w: usize = self
            .masks
            .iter()
            .map(|m| m.data().iter().filter(|&&v| v != 0.0).count())
            .sum();
        w + self.biases.iter().map(Tensor::len).sum::<usize>()
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        self.weights.iter().chain(&self.biases).collect()
    }

    /// Parameter slots in the same order as [`Made::parameters`]. Callers
    /// must keep masked weight entries at zero.
    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.weights.iter_mut().chain(self.biases.iter_mut()).collect()
    }

    /// Zero every weight and bias.
    pub fn zero(&mut self) {
        for p in self.parameters_mut() {
            *p = Tensor::zeros(p.shape().to_vec());
        }
    }

    /// Output biases for `(shift, log_scale)`; lets tests force a fixed affine map.
    pub fn set_output_bias(&mut self, shift: &[f64], log_scale: &[f64]) -> Result<()> {
        if shift.len() != self.d_in || log_scale.len() != self.d_in {
            return Err(Error::shape("set_output_bias", "expected d_in values each"));
        }
        let b = shift.iter().chain(log_scale).copied().collect();
        *self.biases.last_mut().unwrap() = Tensor::vector(b);
        Ok(())
    }

    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundMade<'t> {
        let masks = if trainable {
            self.masks.iter().map(|m| Some(tape.constant(m.clone()))).collect()
        } else {
            vec![None; self.masks.len()]
        };
        BoundMade {
            d_in: self.d_in,
            d_context: self.d_context,
            weights: self.weights.iter().map(|w| bind(tape, w, trainable)).collect(),
            biases: self.biases.iter().map(|b| bind(tape, b, trainable)).collect(),
            masks,
        }
    }

    /// `(shift, log_scale)` for a `[n, d_in]` batch and optional `[n, d_context]` context.
    pub fn forward(&self, x: &Tensor, context: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        let tape = Tape::new();
        let net = self.bind(&tape, false);
        let ctx = context.map(|c| tape.constant(c.clone()));
        let (mu, s) = net.forward(tape.constant(x.clone()), ctx)?;
        Ok((mu.value(), s.value()))
    }
}

fn mask_matrix(in_deg: &[usize], out_deg: &[usize], connect: impl Fn(usize, usize) -> bool) -> Tensor {
    let mut data = Vec::with_capacity(in_deg.len() * out_deg.len());
    for &i in in_deg {
        for &o in out_deg {
            data.push(if connect(o, i) { 1.0 } else { 0.0 });
        }
    }
    Tensor::matrix(in_deg.len(), out_deg.len(), data).expect("mask shape")
}

fn masked(w: Tensor, mask: &Tensor) -> Tensor {
    w.zip_map(mask, "mask", |a, m| a * m).expect("mask shape")
}

/// A [`Made`] whose parameters live on a tape.
#[derive(Debug, Clone)]
pub struct BoundMade<'t> {
    d_in: usize,
    d_context: usize,
    weights: Vec<Var<'t>>,
    biases: Vec<Var<'t>>,
    masks: Vec<Option<Var<'t>>>,
}

impl<'t> BoundMade<'t> {
    pub fn parameters(&self) -> Vec<Var<'t>> {
        self.weights.iter().chain(&self.biases).copied().collect()
    }

    pub fn forward(&self, x: Var<'t>, context: Option<Var<'t>>) -> Result<(Var<'t>, Var<'t>)> {
        let xs = x.shape();
        if xs.len() != 2 || xs[1] != self.d_in {
            return Err(Error::shape("made", format!("input {xs:?}, d_in {}", self.d_in)));
        }
        let mut h = match (context, self.d_context) {
            (None, 0) => x,
            (Some(c), d) if d > 0 && c.shape() == [xs[0], d] => Var::concat_cols(&[x, c])?,
            (c, d) => {
                return Err(Error::shape(
                    "made",
                    format!("context {:?} for d_context {d}", c.map(|v| v.shape())),
                ))
            }
        };
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let w = match self.masks[l] {
                Some(m) => w.mul(m)?,
                None => *w,
            };
            h = h.matmul(w)?.add_row(*b)?;
            if l < last {
                h = h.tanh()?;
            }
        }
        let mu = h.slice_cols(0, self.d_in)?;
        let s = h.slice_cols(self.d_in, 2 * self.d_in)?;
        Ok((mu, s))
    }
}
