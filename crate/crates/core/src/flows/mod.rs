//! Conditional normalizing flows: affine masked autoregressive bijections,
//! reverse permutations and dimension-reducing surjections.

mod maf;
mod permutation;
mod stack;
mod surjection;

pub use maf::{AffineMaf, BoundMaf, S_MAX};
pub use permutation::ReversePermutation;
pub use stack::{
    build_snl_flow, build_ssnl_flow, retained_dim, BoundStack, FlowSpec, FlowStack, Layer,
    Standardizer, CHECKPOINT_VERSION, REDUCTIONS,
};
pub use surjection::{BoundSurjection, Surjection};
