use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numeric::{Tensor, Var};

/// Reverses the coordinate order; its own inverse with zero log-determinant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReversePermutation {
    dim: usize,
}

impl ReversePermutation {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn perm(&self) -> Vec<usize> {
        (0..self.dim).rev().collect()
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let (n, d) = x.dims2("reverse")?;
        let mut out = Vec::with_capacity(n * d);
        for r in 0..n {
            out.extend(x.row_slice(r).iter().rev());
        }
        Tensor::matrix(n, d, out)
    }

    pub fn apply_var<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        x.permute_cols(&self.perm())
    }
}
