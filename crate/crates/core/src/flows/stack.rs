//! Composed conditional flows and their checkpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::maf::{AffineMaf, BoundMaf};
use super::permutation::ReversePermutation;
use super::surjection::{BoundSurjection, Surjection};
use crate::error::{Error, Result};
use crate::numeric::{Rng, Tape, Tensor, Var};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Rows evaluated per tape when scoring large batches.
const EVAL_CHUNK: usize = 2048;

/// Retained fractions accepted by [`build_ssnl_flow`].
pub const REDUCTIONS: [f64; 3] = [0.25, 0.5, 0.75];

/// Architecture descriptor; enough to rebuild an untrained stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub input_dim: usize,
    pub context_dim: usize,
    pub n_flow_layers: usize,
    pub hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    /// `(layer index, retained fraction)` of the surjective layer, if any.
    pub surjection: Option<(usize, f64)>,
}

impl FlowSpec {
    pub fn snl(input_dim: usize, context_dim: usize) -> Self {
        Self {
            input_dim,
            context_dim,
            n_flow_layers: 5,
            hidden: vec![50, 50],
            decoder_hidden: vec![50, 50],
            surjection: None,
        }
    }

    pub fn ssnl(input_dim: usize, context_dim: usize, reduction: f64) -> Self {
        Self {
            surjection: Some((2, reduction)),
            ..Self::snl(input_dim, context_dim)
        }
    }

    /// Latent dimension `floor(reduction * input_dim)` or the input dimension.
    pub fn latent_dim(&self) -> usize {
        match self.surjection {
            Some((_, f)) => retained_dim(self.input_dim, f),
            None => self.input_dim,
        }
    }
}

/// `floor(fraction * dim)` guarded against representation error (0.3 * 10 = 2.9999…).
pub fn retained_dim(dim: usize, fraction: f64) -> usize {
    (fraction * dim as f64 + 1e-9).floor() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Maf(AffineMaf),
    Reverse(ReversePermutation),
    Surjection(Surjection),
}

impl Layer {
    fn in_dim(&self) -> usize {
        match self {
            Layer::Maf(l) => l.dim(),
            Layer::Reverse(l) => l.dim(),
            Layer::Surjection(l) => l.dim(),
        }
    }

    fn out_dim(&self) -> usize {
        match self {
            Layer::Surjection(l) => l.n_keep(),
            other => other.in_dim(),
        }
    }
}

/// Per-coordinate affine standardization of data and conditioning values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub y_shift: Vec<f64>,
    pub y_scale: Vec<f64>,
    pub ctx_shift: Vec<f64>,
    pub ctx_scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(y_dim: usize, ctx_dim: usize) -> Self {
        Self {
            y_shift: vec![0.0; y_dim],
            y_scale: vec![1.0; y_dim],
            ctx_shift: vec![0.0; ctx_dim],
            ctx_scale: vec![1.0; ctx_dim],
        }
    }

    fn apply(x: &Tensor, shift: &[f64], scale: &[f64]) -> Result<Tensor> {
        let (n, d) = x.dims2("standardize")?;
        if d != shift.len() {
            return Err(Error::shape("standardize", format!("{d} columns, {} stats", shift.len())));
        }
        let mut out = x.to_vec();
        for r in 0..n {
            for c in 0..d {
                out[r * d + c] = (out[r * d + c] - shift[c]) / scale[c];
            }
        }
        Tensor::matrix(n, d, out)
    }

    fn unapply(x: &Tensor, shift: &[f64], scale: &[f64]) -> Result<Tensor> {
        let (n, d) = x.dims2("unstandardize")?;
        let mut out = x.to_vec();
        for r in 0..n {
            for c in 0..d {
                out[r * d + c] = out[r * d + c] * scale[c] + shift[c];
            }
        }
        Tensor::matrix(n, d, out)
    }

    /// `-Σ ln scale`: log-Jacobian of the data standardization.
    pub fn log_jacobian(&self) -> f64 {
        -self.y_scale.iter().map(|s| s.ln()).sum::<f64>()
    }
}

/// Conditional density `q(y | theta)` as layers listed from the data side
/// to the latent side, over a standard-normal base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowStack {
    spec: FlowSpec,
    layers: Vec<Layer>,
    standardizer: Standardizer,
}

/// Five affine MAF layers with reverse permutations in between.
pub fn build_snl_flow(input_dim: usize, context_dim: usize, rng: &mut Rng) -> Result<FlowStack> {
    FlowStack::build(&FlowSpec::snl(input_dim, context_dim), rng)
}

/// As [`build_snl_flow`] with the third layer replaced by a surjection that
/// keeps `floor(reduction * input_dim)` coordinates.
pub fn build_ssnl_flow(
    input_dim: usize,
    context_dim: usize,
    reduction: f64,
    rng: &mut Rng,
) -> Result<FlowStack> {
    if !REDUCTIONS.contains(&reduction) {
        return Err(Error::InvalidParameter(format!(
            "reduction must be one of {REDUCTIONS:?}, got {reduction}"
        )));
    }
    FlowStack::build(&FlowSpec::ssnl(input_dim, context_dim, reduction), rng)
}

impl FlowStack {
    pub fn build(spec: &FlowSpec, rng: &mut Rng) -> Result<Self> {
        if spec.input_dim == 0 || spec.n_flow_layers == 0 {
            return Err(Error::InvalidParameter("flow needs input_dim >= 1 and one layer".into()));
        }
        if let Some((pos, f)) = spec.surjection {
            if spec.input_dim < 2 {
                return Err(Error::InvalidParameter("surjection needs input_dim >= 2".into()));
            }
            let q = retained_dim(spec.input_dim, f);
            if q == 0 || q >= spec.input_dim {
                return Err(Error::InvalidParameter(format!(
                    "reduction {f} of dimension {} retains {q} coordinates",
                    spec.input_dim
                )));
            }
            if pos >= spec.n_flow_layers {
                return Err(Error::InvalidParameter(format!("surjection position {pos} out of range")));
            }
        }
        let mut layers = Vec::new();
        let mut dim = spec.input_dim;
        for k in 0..spec.n_flow_layers {
            if k > 0 {
                layers.push(Layer::Reverse(ReversePermutation::new(dim)));
            }
            match spec.surjection {
                Some((pos, f)) if pos == k => {
                    let q = retained_dim(spec.input_dim, f);
                    layers.push(Layer::Surjection(Surjection::new(
                        dim,
                        q,
                        spec.context_dim,
                        &spec.hidden,
                        &spec.decoder_hidden,
                        rng,
                    )?));
                    dim = q;
                }
                _ => layers.push(Layer::Maf(AffineMaf::new(dim, spec.context_dim, &spec.hidden, rng)?)),
            }
        }
        Ok(Self {
            spec: spec.clone(),
            layers,
            standardizer: Standardizer::identity(spec.input_dim, spec.context_dim),
        })
    }

    /// Assemble a stack from explicit layers (used for hand-built test flows).
    pub fn from_layers(spec: FlowSpec, layers: Vec<Layer>) -> Result<Self> {
        let mut dim = spec.input_dim;
        for (i, l) in layers.iter().enumerate() {
            if l.in_dim() != dim {
                return Err(Error::shape("flow_stack", format!("layer {i} expects {} inputs, gets {dim}", l.in_dim())));
            }
            dim = l.out_dim();
        }
        let standardizer = Standardizer::identity(spec.input_dim, spec.context_dim);
        Ok(Self {
            spec,
            layers,
            standardizer,
        })
    }

    pub fn spec(&self) -> &FlowSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn context_dim(&self) -> usize {
        self.spec.context_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.layers.last().map_or(self.spec.input_dim, Layer::out_dim)
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn set_standardizer(&mut self, s: Standardizer) -> Result<()> {
        if s.y_shift.len() != self.input_dim()
            || s.y_scale.len() != self.input_dim()
            || s.ctx_shift.len() != self.context_dim()
            || s.ctx_scale.len() != self.context_dim()
        {
            return Err(Error::shape("set_standardizer", "statistics do not match flow dims"));
        }
        if s.y_scale.iter().chain(&s.ctx_scale).any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter("standardizer scales must be positive".into()));
        }
        self.standardizer = s;
        Ok(())
    }

    /// Trainable parameter count (masked-out MADE weights excluded).
    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Maf(m) => m.n_params(),
                Layer::Surjection(s) => s.n_params(),
                Layer::Reverse(_) => 0,
            })
            .sum()
    }

    /// Parameter tensors in the order produced by [`BoundStack::parameters`].
    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Maf(m) => out.extend(m.conditioner().parameters()),
                Layer::Surjection(s) => out.extend(s.parameters()),
                Layer::Reverse(_) => {}
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                Layer::Maf(m) => out.extend(m.conditioner_mut().parameters_mut()),
                Layer::Surjection(s) => out.extend(s.parameters_mut()),
                Layer::Reverse(_) => {}
            }
        }
        out
    }

    pub fn bind<'t>(&'t self, tape: &'t Tape, trainable: bool) -> BoundStack<'t> {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Maf(m) => BoundLayer::Maf(m.bind(tape, trainable)),
                Layer::Reverse(r) => BoundLayer::Reverse(r.clone()),
                Layer::Surjection(s) => BoundLayer::Surjection(s.bind(tape, trainable)),
            })
            .collect();
        BoundStack {
            tape,
            stack: self,
            layers,
        }
    }

    fn check_inputs(&self, y: &Tensor, theta: &Tensor) -> Result<usize> {
        let (n, d) = y.dims2("flow_log_prob")?;
        if d != self.input_dim() {
            return Err(Error::shape("flow_log_prob", format!("y has {d} columns, flow expects {}", self.input_dim())));
        }
        let (nt, p) = theta.dims2("flow_log_prob")?;
        if p != self.context_dim() || (nt != n && nt != 1) {
            return Err(Error::shape(
                "flow_log_prob",
                format!("theta {:?} for {n} rows and context dim {}", theta.shape(), self.context_dim()),
            ));
        }
        Ok(n)
    }

    /// `log q(y | theta)` per row of `y` as a `[n, 1]` column. `theta` may
    /// be a single row shared by all `y` rows.
    pub fn log_prob(&self, y: &Tensor, theta: &Tensor) -> Result<Tensor> {
        let n = self.check_inputs(y, theta)?;
        if n <= EVAL_CHUNK {
            let tape = Tape::new();
            let bound = self.bind(&tape, false);
            return Ok(bound.log_prob(y, theta)?.value());
        }
        let mut out = Vec::with_capacity(n);
        for start in (0..n).step_by(EVAL_CHUNK) {
            let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(n)).collect();
            let yc = y.gather_rows(&idx)?;
            let tc = if theta.shape()[0] == 1 { theta.clone() } else { theta.gather_rows(&idx)? };
            let tape = Tape::new();
            let bound = self.bind(&tape, false);
            out.extend_from_slice(bound.log_prob(&yc, &tc)?.value().data());
        }
        Tensor::matrix(n, 1, out)
    }

    pub fn log_prob_one(&self, y: &[f64], theta: &[f64]) -> Result<f64> {
        let lp = self.log_prob(&Tensor::row(y.to_vec()), &Tensor::row(theta.to_vec()))?;
        Ok(lp.data()[0])
    }

    /// Draw `n` observations `y ~ q(. | theta)` for a single conditioning row.
    pub fn sample(&self, theta: &[f64], n: usize, rng: &mut Rng) -> Result<Tensor> {
        if theta.len() != self.context_dim() {
            return Err(Error::shape("flow_sample", "theta length differs from context dim"));
        }
        let st = &self.standardizer;
        let ctx = if self.context_dim() > 0 {
            let row = Tensor::row(theta.to_vec());
            let s = Standardizer::apply(&row, &st.ctx_shift, &st.ctx_scale)?;
            let rep: Vec<f64> = (0..n).flat_map(|_| s.data().iter().copied()).collect();
            Some(Tensor::matrix(n, self.context_dim(), rep)?)
        } else {
            None
        };
        let q = self.latent_dim();
        let mut x = Tensor::matrix(n, q, (0..n * q).map(|_| rng.normal()).collect())?;
        for (i, l) in self.layers.iter().enumerate().rev() {
            x = match l {
                Layer::Maf(m) => m.forward(&x, ctx.as_ref()),
                Layer::Reverse(r) => r.apply(&x),
                Layer::Surjection(s) => s.forward_sample(&x, ctx.as_ref(), rng),
            }
            .map_err(|e| e.in_layer(i))?;
        }
        Standardizer::unapply(&x, &st.y_shift, &st.y_scale)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ck = Checkpoint {
            format_version: CHECKPOINT_VERSION,
            architecture: self.spec.clone(),
            stack: self.clone(),
        };
        std::fs::write(path, serde_json::to_vec(&ck)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_slice(&std::fs::read(path)?)?;
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ck.format_version
            )));
        }
        if ck.architecture != ck.stack.spec {
            return Err(Error::Checkpoint("architecture descriptor does not match stored layers".into()));
        }
        Ok(ck.stack)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    architecture: FlowSpec,
    stack: FlowStack,
}

#[derive(Debug, Clone)]
enum BoundLayer<'t> {
    Maf(BoundMaf<'t>),
    Reverse(ReversePermutation),
    Surjection(BoundSurjection<'t>),
}

/// A [`FlowStack`] with parameters registered on a tape.
#[derive(Debug, Clone)]
pub struct BoundStack<'t> {
    tape: &'t Tape,
    stack: &'t FlowStack,
    layers: Vec<BoundLayer<'t>>,
}

impl<'t> BoundStack<'t> {
    pub fn parameters(&self) -> Vec<Var<'t>> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                BoundLayer::Maf(m) => out.extend(m.parameters()),
                BoundLayer::Surjection(s) => out.extend(s.parameters()),
                BoundLayer::Reverse(_) => {}
            }
        }
        out
    }

    /// Log-density of raw (unstandardized) data rows; `[n, 1]`.
    pub fn log_prob(&self, y: &Tensor, theta: &Tensor) -> Result<Var<'t>> {
        let n = self.stack.check_inputs(y, theta)?;
        let st = &self.stack.standardizer;
        let ys = self.tape.constant(Standardizer::apply(y, &st.y_shift, &st.y_scale)?);
        let ctx = if self.stack.context_dim() > 0 {
            let t = Standardizer::apply(theta, &st.ctx_shift, &st.ctx_scale)?;
            let t = if t.shape()[0] == n {
                t
            } else {
                let rep: Vec<f64> = (0..n).flat_map(|_| t.data().iter().copied()).collect();
                Tensor::matrix(n, self.stack.context_dim(), rep)?
            };
            Some(self.tape.constant(t))
        } else {
            None
        };
        let lp = self.log_prob_standardized(ys, ctx)?;
        lp.add_scalar(st.log_jacobian())
    }

    /// Log-density in standardized coordinates; `context` may be a
    /// differentiable variable.
    pub fn log_prob_standardized(&self, y: Var<'t>, context: Option<Var<'t>>) -> Result<Var<'t>> {
        let mut x = y;
        let mut total: Option<Var<'t>> = None;
        for (i, l) in self.layers.iter().enumerate() {
            let (next, term) = match l {
                BoundLayer::Maf(m) => {
                    let (z, ld) = m.inverse(x, context).map_err(|e| e.in_layer(i))?;
                    (z, Some(ld))
                }
                BoundLayer::Reverse(r) => (r.apply_var(x).map_err(|e| e.in_layer(i))?, None),
                BoundLayer::Surjection(s) => {
                    let (z, lc) = s.inverse_and_contribution(x, context).map_err(|e| e.in_layer(i))?;
                    (z, Some(lc))
                }
            };
            x = next;
            if let Some(t) = term {
                total = Some(match total {
                    Some(acc) => acc.add(t)?,
                    None => t,
                });
            }
        }
        let base = x.std_normal_log_pdf()?.sum_cols()?;
        match total {
            Some(acc) => acc.add(base),
            None => Ok(base),
        }
    }
}
