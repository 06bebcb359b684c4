//! Tensor-level reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every primitive applied to [`Var`] handles. Nodes are
//! appended in evaluation order, so parents always precede their children and
//! [`Tape::backward`] can sweep the node list once in reverse.
//!
//! ```
//! use ssnl_core::numeric::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.param(Tensor::scalar(3.0));
//! let y = x.square().unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.wrt(x).item().unwrap(), 6.0);
//! ```
//!
//! Every primitive checks shapes up front and rejects non-finite results,
//! naming the operation that produced them.

use std::cell::RefCell;
use std::f64::consts::PI;

use super::special::erf;
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddRow(usize, usize),
    MatMul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Sigmoid(usize),
    Erf(usize),
    Square(usize),
    Sum(usize),
    Mean(usize),
    SumCols(usize),
    LogSumExpCols(usize),
    SliceCols { src: usize, start: usize },
    ConcatCols(Vec<usize>),
    PermuteCols { src: usize, perm: Vec<usize> },
    Broadcast(usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recording of a computation graph. Single-threaded; build one per thread.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

/// Adjoints of every node reachable from a backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` does not influence the output.
    pub fn wrt(&self, v: Var<'_>) -> Tensor {
        match &self.grads[v.id] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes[v.id].clone()),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient (data, masks).
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Tensor {
        self.nodes.borrow()[id].value.clone()
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    fn record(&self, op_name: &'static str, value: Tensor, op: Op, parents: &[usize]) -> Result<Var<'_>> {
        if !value.all_finite() {
            return Err(Error::Numeric { op: op_name });
        }
        let needs = parents.iter().any(|&p| self.needs(p));
        Ok(self.push(value, op, needs))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let out = &nodes[output.id];
        if out.value.len() != 1 {
            return Err(Error::NonScalarOutput(out.value.shape().to_vec()));
        }
        let n = output.id + 1;
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; n];
        adj[output.id] = Some(vec![1.0]);

        for id in (0..n).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let want = |p: usize| nodes[p].needs_grad;
            match &node.op {
                Op::Leaf => {
                    adj[id] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    if want(*a) {
                        accumulate(&mut adj, &nodes, *a, |buf| add_into(buf, &g));
                    }
                    if want(*b) {
                        accumulate(&mut adj, &nodes, *b, |buf| add_into(buf, &g));
                    }
                }
                Op::Sub(a, b) => {
                    if want(*a) {
                        accumulate(&mut adj, &nodes, *a, |buf| add_into(buf, &g));
                    }
                    if want(*b) {
                        accumulate(&mut adj, &nodes, *b, |buf| {
                            buf.iter_mut().zip(&g).for_each(|(o, gi)| *o -= gi)
                        });
                    }
                }
                Op::Mul(a, b) => {
                    let av = nodes[*a].value.data();
                    let bv = nodes[*b].value.data();
                    if want(*a) {
                        accumulate(&mut adj, &nodes, *a, |buf| {
                            for i in 0..buf.len() {
                                buf[i] += g[i] * bv[i];
                            }
                        });
                    }
                    if want(*b) {
                        accumulate(&mut adj, &nodes, *b, |buf| {
                            for i in 0..buf.len() {
                                buf[i] += g[i] * av[i];
                            }
                        });
                    }
                }
                Op::Div(a, b) => {
                    let av = nodes[*a].value.data();
                    let bv = nodes[*b].value.data();
                    if want(*a) {
                        accumulate(&mut adj, &nodes, *a, |buf| {
                            for i in 0..buf.len() {
                                buf[i] += g[i] / bv[i];
                            }
                        });
                    }
                    if want(*b) {
                        accumulate(&mut adj, &nodes, *b, |buf| {
                            for i in 0..buf.len() {
                                buf[i] -= g[i] * av[i] / (bv[i] * bv[i]);
                            }
                        });
                    }
                }
                Op::AddRow(a, b) => {
                    if want(*a) {
                        accumulate(&mut adj, &nodes, *a, |buf| add_into(buf, &g));
                    }
                    if want(*b) {
                        let m = nodes[*b].value.len();
                        accumulate(&mut adj, &nodes, *b, |buf| {
                            for (i, gi) in g.iter().enumerate() {
                                buf[i % m] += gi;
                            }
                        });
                    }
                }
                Op::MatMul(a, b) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    let (rows, k) = (av.shape()[0], av.shape()[1]);
                    let m = bv.shape()[1];
                    if want(*a) {
                        // dA = G · Bᵀ
                        accumulate(&mut adj, &nodes, *a, |buf| {
                            gemm(rows, m, k, &g, (m, 1), bv.data(), (1, m), buf, true)
                        });
                    }
                    if want(*b) {
                        // dB = Aᵀ · G
                        accumulate(&mut adj, &nodes, *b, |buf| {
                            gemm(k, rows, m, av.data(), (1, k), &g, (m, 1), buf, true)
                        });
                    }
                }
                Op::Scale(a, c) => accumulate(&mut adj, &nodes, *a, |buf| {
                    buf.iter_mut().zip(&g).for_each(|(o, gi)| *o += c * gi)
                }),
                Op::AddScalar(a) => accumulate(&mut adj, &nodes, *a, |buf| add_into(buf, &g)),
                Op::Exp(a) => {
                    let out = node.value.data();
                    accumulate(&mut adj, &nodes, *a, |buf| {
                        for i in 0..buf.len() {
                            buf[i] += g[i] * out[i];
                        }
                    })
                }
                Op::Log(a) => {
                    let x = nodes[*a].value.data();
                    accumulate(&mut adj, &nodes, *a, |buf| {
                        for i in 0..buf.len() {
                            buf[i] += g[i] / x[i];
                        }
                    })
                }
                Op::Tanh(a) => {
                    let out = node.value.data();
                    accumulate(&mut adj, &nodes, *a, |buf| {
                        for i in 0..buf.len() {
                            buf[i] += g[i] * (1.0 - out[i] * out[i]);
                        }
                    })
                }
                Op::Sigmoid(a) => {
                    let out = node.value.data();
                    accumulate(&mut adj, &nodes, *a, |buf| {
                        for i in 0..buf.len() {
                            buf[i] += g[i] * out[i] * (1.0 - out[i]);
                        }
                    })
                }
                Op::Erf(a) => {
                    let x = nodes[*a].value.data();
                    let c = 2.0 / PI.sqrt();
                    accumulate(&mut adj, &nodes, *a, |buf| {
                        for i in 0..buf.len() {
                            buf[i] += g[i] * c * (-x[i] * x[i]).exp();
                        }
                    })
                }
                Op::Square(a) => {
                    let x = nodes[*a].value.data();
                    accumulate(&mut adj, &nodes, *a, |buf| {
                        for i in 0..buf.len() {
                            buf[i] += 2.0 * g[i] * x[i];
                        }
                    })
                }
                Op::Sum(a) => accumulate(&mut adj, &nodes, *a, |buf| {
                    buf.iter_mut().for_each(|o| *o += g[0])
                }),
                Op::Mean(a) => {
                    let n = nodes[*a].value.len() as f64;
                    accumulate(&mut adj, &nodes, *a, |buf| {
                        buf.iter_mut().for_each(|o| *o += g[0] / n)
                    })
                }
                Op::SumCols(a) => {
                    let cols = nodes[*a].value.shape()[1];
                    accumulate(&mut adj, &nodes, *a, |buf| {
                        for (i, o) in buf.iter_mut().enumerate() {
                            *o += g[i / cols];
                        }
                    })
                }
                Op::LogSumExpCols(a) => {
                    let x = nodes[*a].value.data();
                    let cols = nodes[*a].value.shape()[1];
                    let out = node.value.data();
                    accumulate(&mut adj, &nodes, *a, |buf| {
                        for (i, o) in buf.iter_mut().enumerate() {
                            let r = i / cols;
                            *o += g[r] * (x[i] - out[r]).exp();
                        }
                    })
                }
                Op::SliceCols { src, start } => {
                    let src_cols = nodes[*src].value.shape()[1];
                    let w = node.value.shape()[1];
                    accumulate(&mut adj, &nodes, *src, |buf| {
                        for (i, gi) in g.iter().enumerate() {
                            let (r, c) = (i / w, i % w);
                            buf[r * src_cols + start + c] += gi;
                        }
                    })
                }
                Op::ConcatCols(parts) => {
                    let total = node.value.shape()[1];
                    let mut offset = 0;
                    for &p in parts {
                        let w = nodes[p].value.shape()[1];
                        if want(p) {
                            accumulate(&mut adj, &nodes, p, |buf| {
                                for (i, o) in buf.iter_mut().enumerate() {
                                    let (r, c) = (i / w, i % w);
                                    *o += g[r * total + offset + c];
                                }
                            });
                        }
                        offset += w;
                    }
                }
                Op::PermuteCols { src, perm } => {
                    let cols = perm.len();
                    accumulate(&mut adj, &nodes, *src, |buf| {
                        for (i, gi) in g.iter().enumerate() {
                            let (r, c) = (i / cols, i % cols);
                            buf[r * cols + perm[c]] += gi;
                        }
                    })
                }
                Op::Broadcast(a) => {
                    let total: f64 = g.iter().sum();
                    accumulate(&mut adj, &nodes, *a, |buf| buf[0] += total)
                }
            }
        }

        let shapes = nodes.iter().map(|nd| nd.value.shape().to_vec()).collect();
        let grads = adj
            .into_iter()
            .enumerate()
            .map(|(id, g)| {
                g.map(|data| {
                    Tensor::new(nodes[id].value.shape().to_vec(), data)
                        .expect("adjoint buffer matches node shape")
                })
            })
            .collect();
        Ok(Gradients { grads, shapes })
    }
}

fn add_into(buf: &mut [f64], g: &[f64]) {
    buf.iter_mut().zip(g).for_each(|(o, gi)| *o += gi);
}

fn accumulate(
    adj: &mut [Option<Vec<f64>>],
    nodes: &[Node],
    id: usize,
    f: impl FnOnce(&mut Vec<f64>),
) {
    if !nodes[id].needs_grad {
        return;
    }
    let buf = adj[id].get_or_insert_with(|| vec![0.0; nodes[id].value.len()]);
    f(buf);
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Tensor {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    fn unary(self, name: &'static str, op: Op, f: impl Fn(f64) -> f64) -> Result<Var<'t>> {
        let v = self.value().map(f);
        self.tape.record(name, v, op, &[self.id])
    }

    fn binary(
        self,
        other: Var<'t>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        same_shape(name, &a, &b)?;
        let v = a.zip_map(&b, name, f)?;
        self.tape.record(name, v, op, &[self.id, other.id])
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "div", Op::Div(self.id, other.id), |a, b| a / b)
    }

    /// `self[i, j] + bias[j]` for a `[n, m]` matrix and an `m`-element bias.
    pub fn add_row(self, bias: Var<'t>) -> Result<Var<'t>> {
        let a = self.value();
        let b = bias.value();
        let (n, m) = a.dims2("add_row")?;
        if b.len() != m {
            return Err(Error::shape(
                "add_row",
                format!("bias of {} values for {m} columns", b.len()),
            ));
        }
        let bd = b.data();
        let mut out = a.to_vec();
        for r in 0..n {
            for c in 0..m {
                out[r * m + c] += bd[c];
            }
        }
        let v = Tensor::matrix(n, m, out)?;
        self.tape
            .record("add_row", v, Op::AddRow(self.id, bias.id), &[self.id, bias.id])
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.value().matmul(&other.value())?;
        self.tape
            .record("matmul", v, Op::MatMul(self.id, other.id), &[self.id, other.id])
    }

    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        self.unary("scale", Op::Scale(self.id, c), |x| c * x)
    }

    pub fn neg(self) -> Result<Var<'t>> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, c: f64) -> Result<Var<'t>> {
        self.unary("add_scalar", Op::AddScalar(self.id), |x| x + c)
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.unary("exp", Op::Exp(self.id), f64::exp)
    }

    pub fn log(self) -> Result<Var<'t>> {
        self.unary("log", Op::Log(self.id), f64::ln)
    }

    pub fn tanh(self) -> Result<Var<'t>> {
        self.unary("tanh", Op::Tanh(self.id), f64::tanh)
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.unary("sigmoid", Op::Sigmoid(self.id), super::special::sigmoid)
    }

    pub fn erf(self) -> Result<Var<'t>> {
        self.unary("erf", Op::Erf(self.id), erf)
    }

    pub fn square(self) -> Result<Var<'t>> {
        self.unary("square", Op::Square(self.id), |x| x * x)
    }

    pub fn sum(self) -> Result<Var<'t>> {
        let v = Tensor::scalar(self.value().data().iter().sum());
        self.tape.record("sum", v, Op::Sum(self.id), &[self.id])
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let x = self.value();
        if x.is_empty() {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let v = Tensor::scalar(x.data().iter().sum::<f64>() / x.len() as f64);
        self.tape.record("mean", v, Op::Mean(self.id), &[self.id])
    }

    /// Row sums of a `[n, m]` matrix as a `[n, 1]` column.
    pub fn sum_cols(self) -> Result<Var<'t>> {
        let x = self.value();
        let (n, _) = x.dims2("sum_cols")?;
        let out = (0..n).map(|r| x.row_slice(r).iter().sum()).collect();
        let v = Tensor::matrix(n, 1, out)?;
        self.tape.record("sum_cols", v, Op::SumCols(self.id), &[self.id])
    }

    /// Row-wise log-sum-exp of a `[n, m]` matrix as a `[n, 1]` column.
    pub fn logsumexp_cols(self) -> Result<Var<'t>> {
        let x = self.value();
        let (n, _) = x.dims2("logsumexp")?;
        let out = (0..n).map(|r| super::special::logsumexp(x.row_slice(r))).collect();
        let v = Tensor::matrix(n, 1, out)?;
        self.tape
            .record("logsumexp", v, Op::LogSumExpCols(self.id), &[self.id])
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'t>> {
        let v = self.value().slice_cols(start, end)?;
        self.tape.record(
            "slice_cols",
            v,
            Op::SliceCols {
                src: self.id,
                start,
            },
            &[self.id],
        )
    }

    pub fn concat_cols(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat_cols", "no inputs"))?;
        let values: Vec<Tensor> = parts.iter().map(Var::value).collect();
        let refs: Vec<&Tensor> = values.iter().collect();
        let v = Tensor::concat_cols(&refs)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        first
            .tape
            .record("concat_cols", v, Op::ConcatCols(ids.clone()), &ids)
    }

    /// Column gather: `out[:, j] = self[:, perm[j]]`. `perm` must be a permutation.
    pub fn permute_cols(self, perm: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let (n, m) = x.dims2("permute_cols")?;
        let mut seen = vec![false; m];
        if perm.len() != m
            || perm.iter().any(|&p| p >= m || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::shape(
                "permute_cols",
                format!("{perm:?} is not a permutation of {m} columns"),
            ));
        }
        let mut out = Vec::with_capacity(n * m);
        for r in 0..n {
            let row = x.row_slice(r);
            out.extend(perm.iter().map(|&p| row[p]));
        }
        let v = Tensor::matrix(n, m, out)?;
        self.tape.record(
            "permute_cols",
            v,
            Op::PermuteCols {
                src: self.id,
                perm: perm.to_vec(),
            },
            &[self.id],
        )
    }

    /// Expand a one-element tensor to `shape`.
    pub fn broadcast(self, shape: Vec<usize>) -> Result<Var<'t>> {
        let x = self.value();
        if x.len() != 1 {
            return Err(Error::shape(
                "broadcast",
                format!("only one-element tensors broadcast, got {:?}", x.shape()),
            ));
        }
        let v = Tensor::full(shape, x.data()[0]);
        self.tape.record("broadcast", v, Op::Broadcast(self.id), &[self.id])
    }

    /// Elementwise diagonal-Gaussian log-density of `self` under
    /// `N(mean, exp(log_scale)^2)`.
    pub fn normal_log_pdf(self, mean: Var<'t>, log_scale: Var<'t>) -> Result<Var<'t>> {
        let z = self.sub(mean)?.mul(log_scale.neg()?.exp()?)?;
        z.square()?
            .scale(-0.5)?
            .sub(log_scale)?
            .add_scalar(-0.5 * (2.0 * PI).ln())
    }

    /// Elementwise standard-normal log-density.
    pub fn std_normal_log_pdf(self) -> Result<Var<'t>> {
        self.square()?.scale(-0.5)?.add_scalar(-0.5 * (2.0 * PI).ln())
    }
}
