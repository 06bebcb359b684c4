//! Feed-forward networks: plain tanh MLPs and MADE-style masked
//! autoregressive conditioners.

mod made;
mod mlp;

pub use made::{BoundMade, Made};
pub use mlp::{BoundMlp, Mlp};

use crate::numeric::{Rng, Tape, Tensor, Var};

/// Glorot-uniform weight matrix `[fan_in, fan_out]`.
pub(crate) fn glorot(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| limit * (2.0 * rng.uniform() - 1.0))
        .collect();
    Tensor::matrix(fan_in, fan_out, data).expect("glorot shape")
}

/// Register a tensor as trainable or frozen.
pub(crate) fn bind<'t>(tape: &'t Tape, t: &Tensor, trainable: bool) -> Var<'t> {
    if trainable {
        tape.param(t.clone())
    } else {
        tape.constant(t.clone())
    }
}
