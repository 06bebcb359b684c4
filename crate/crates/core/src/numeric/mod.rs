//! Numeric foundation: tensors, reverse-mode differentiation, special
//! functions and seeded random streams.

mod rng;
pub mod special;
mod tape;
mod tensor;

pub use rng::{draw, Dist, Rng};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
