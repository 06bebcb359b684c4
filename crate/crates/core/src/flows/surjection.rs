//! Dimension-reducing conditional surjection.
//!
//! The input `y` is split into a kept block `y+` (first `n_keep` coordinates)
//! and a dropped block `y-`. An affine MAF conditioned on `[y-, theta]` maps
//! `y+` to the latent `z`, and a decoder MLP on `[z, theta]` parameterizes a
//! diagonal Gaussian over `y-`. The layer's log-likelihood contribution is
//! `log N(y-; mean, diag(scale^2)) + log|det dz/dy+|`.

use serde::{Deserialize, Serialize};

use super::maf::{AffineMaf, BoundMaf};
use crate::error::{Error, Result};
use crate::nets::{BoundMlp, Mlp};
use crate::numeric::{Rng, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surjection {
    dim: usize,
    n_keep: usize,
    context_dim: usize,
    inner: AffineMaf,
    decoder: Mlp,
}

impl Surjection {
    pub fn new(
        dim: usize,
        n_keep: usize,
        context_dim: usize,
        hidden: &[usize],
        decoder_hidden: &[usize],
        rng: &mut Rng,
    ) -> Result<Self> {
        if n_keep == 0 || n_keep >= dim {
            return Err(Error::InvalidParameter(format!(
                "surjection needs 1 <= n_keep < dim, got n_keep={n_keep}, dim={dim}"
            )));
        }
        let dropped = dim - n_keep;
        let inner = AffineMaf::new(n_keep, dropped + context_dim, hidden, rng)?;
        let mut widths = vec![n_keep + context_dim];
        widths.extend_from_slice(decoder_hidden);
        widths.push(2 * dropped);
        let decoder = Mlp::new(&widths, rng)?;
        Ok(Self {
            dim,
            n_keep,
            context_dim,
            inner,
            decoder,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_keep(&self) -> usize {
        self.n_keep
    }

    pub fn inner(&self) -> &AffineMaf {
        &self.inner
    }

    pub fn inner_mut(&mut self) -> &mut AffineMaf {
        &mut self.inner
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    pub fn decoder_mut(&mut self) -> &mut Mlp {
        &mut self.decoder
    }

    /// Inner-flow parameters followed by decoder parameters.
    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut p = self.inner.conditioner().parameters();
        p.extend(self.decoder.parameters());
        p
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.inner.conditioner_mut().parameters_mut();
        p.extend(self.decoder.parameters_mut());
        p
    }

    pub fn n_params(&self) -> usize {
        self.inner.n_params() + self.decoder.n_params()
    }

    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundSurjection<'t> {
        BoundSurjection {
            n_keep: self.n_keep,
            dim: self.dim,
            inner: self.inner.bind(tape, trainable),
            decoder: self.decoder.bind(tape, trainable),
        }
    }

    /// `(z, contribution)` for a `[n, dim]` batch; contribution is `[n, 1]`.
    pub fn inverse_and_contribution(
        &self,
        y: &Tensor,
        context: Option<&Tensor>,
    ) -> Result<(Tensor, Tensor)> {
        let tape = Tape::new();
        let layer = self.bind(&tape, false);
        let ctx = context.map(|c| tape.constant(c.clone()));
        let (z, lc) = layer.inverse_and_contribution(tape.constant(y.clone()), ctx)?;
        Ok((z.value(), lc.value()))
    }

    /// Decoder Gaussian parameters `(mean, log_scale)` over `y-` given `[z, theta]`.
    fn decode(&self, z: &Tensor, context: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        let input = match context {
            Some(c) => Tensor::concat_cols(&[z, c])?,
            None => z.clone(),
        };
        let out = self.decoder.forward(&input)?;
        let dropped = self.dim - self.n_keep;
        Ok((out.slice_cols(0, dropped)?, out.slice_cols(dropped, 2 * dropped)?))
    }

    /// Draw `y-` from the decoder, then push `z` through the inner flow.
    pub fn forward_sample(&self, z: &Tensor, context: Option<&Tensor>, rng: &mut Rng) -> Result<Tensor> {
        let (n, q) = z.dims2("surjection_forward")?;
        if q != self.n_keep {
            return Err(Error::shape(
                "surjection_forward",
                format!("{q} latent columns for n_keep {}", self.n_keep),
            ));
        }
        let (mean, log_scale) = self.decode(z, context)?;
        let mut y_minus = mean.to_vec();
        for (v, ls) in y_minus.iter_mut().zip(log_scale.data()) {
            *v += ls.exp() * rng.normal();
        }
        let y_minus = Tensor::matrix(n, self.dim - self.n_keep, y_minus)?;
        let inner_ctx = match context {
            Some(c) => Tensor::concat_cols(&[&y_minus, c])?,
            None => y_minus.clone(),
        };
        let y_plus = self.inner.forward(z, Some(&inner_ctx))?;
        Tensor::concat_cols(&[&y_plus, &y_minus])
    }
}

#[derive(Debug, Clone)]
pub struct BoundSurjection<'t> {
    n_keep: usize,
    dim: usize,
    inner: BoundMaf<'t>,
    decoder: BoundMlp<'t>,
}

impl<'t> BoundSurjection<'t> {
    pub fn parameters(&self) -> Vec<Var<'t>> {
        let mut p = self.inner.parameters();
        p.extend(self.decoder.parameters());
        p
    }

    pub fn inverse_and_contribution(
        &self,
        y: Var<'t>,
        context: Option<Var<'t>>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let y_plus = y.slice_cols(0, self.n_keep)?;
        let y_minus = y.slice_cols(self.n_keep, self.dim)?;
        let inner_ctx = match context {
            Some(c) => Var::concat_cols(&[y_minus, c])?,
            None => y_minus,
        };
        let (z, log_det) = self.inner.inverse(y_plus, Some(inner_ctx))?;
        let dec_in = match context {
            Some(c) => Var::concat_cols(&[z, c])?,
            None => z,
        };
        let out = self.decoder.forward(dec_in)?;
        let dropped = self.dim - self.n_keep;
        let mean = out.slice_cols(0, dropped)?;
        let log_scale = out.slice_cols(dropped, 2 * dropped)?;
        if log_scale.value().data().iter().any(|&ls| ls.exp() == 0.0) {
            return Err(Error::Numeric { op: "decoder_scale" });
        }
        let lc = y_minus.normal_log_pdf(mean, log_scale)?.sum_cols()?;
        Ok((z, lc.add(log_det)?))
    }
}
