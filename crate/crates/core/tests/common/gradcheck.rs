//! Reverse-mode versus central finite-difference checks on random
//! instances. Each check returns the worst norm-wise relative error seen.

use ssnl_core::flows::{AffineMaf, FlowSpec, FlowStack, ReversePermutation, Surjection};
use ssnl_core::nets::{Made, Mlp};
use ssnl_core::numeric::{Rng, Tape, Tensor, Var};
use ssnl_core::simulators::{ou_log_likelihood_var, Ou, Simulator};

use super::rel_err;

/// Finite-difference step relative to each coordinate's magnitude.
const STEP: f64 = 1e-5;

type Loss = dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>;

fn flatten<'a>(ts: impl IntoIterator<Item = &'a Tensor>) -> Vec<f64> {
    ts.into_iter().flat_map(|t| t.data().to_vec()).collect()
}

fn unflatten(like: &[Tensor], x: &[f64]) -> Vec<Tensor> {
    let mut off = 0;
    like.iter()
        .map(|t| {
            let n = t.len();
            off += n;
            Tensor::new(t.shape().to_vec(), x[off - n..off].to_vec()).unwrap()
        })
        .collect()
}

fn fd(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            let h = STEP * orig.abs().max(1e-3);
            xp[i] = orig + h;
            let fp = f(&xp);
            xp[i] = orig - h;
            let fm = f(&xp);
            xp[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Relative error of the gradient of a scalar function of plain tensors.
pub fn check_inputs(inputs: &[Tensor], f: &Loss) -> f64 {
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&tape, &vars);
    let grads = tape.backward(out).unwrap();
    let ad: Vec<f64> = vars.iter().flat_map(|v| grads.wrt(*v).to_vec()).collect();
    let numeric = fd(
        |x| {
            let tape = Tape::new();
            let vars: Vec<Var> = unflatten(inputs, x).into_iter().map(|t| tape.constant(t)).collect();
            f(&tape, &vars).value().item().unwrap()
        },
        &flatten(inputs),
    );
    rel_err(&ad, &numeric)
}

/// Relative error of the gradient with respect to a module's weights and
/// the plain inputs together. `f` binds the module on the tape and returns
/// the loss and the bound weights.
pub fn check_module<M: Clone>(
    module: &M,
    weights: fn(&M) -> Vec<&Tensor>,
    weights_mut: fn(&mut M) -> Vec<&mut Tensor>,
    inputs: &[Tensor],
    f: &dyn for<'t> Fn(&'t M, &'t Tape, &[Var<'t>]) -> (Var<'t>, Vec<Var<'t>>),
) -> f64 {
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let (out, bound) = f(module, &tape, &vars);
    let grads = tape.backward(out).unwrap();
    let ad: Vec<f64> = bound.iter().chain(&vars).flat_map(|v| grads.wrt(*v).to_vec()).collect();

    let w: Vec<Tensor> = weights(module).into_iter().cloned().collect();
    let n_w: usize = w.iter().map(Tensor::len).sum();
    let mut x = flatten(&w);
    x.extend(flatten(inputs));
    let numeric = fd(
        |x| {
            let mut m = module.clone();
            for (slot, t) in weights_mut(&mut m).into_iter().zip(unflatten(&w, &x[..n_w])) {
                *slot = t;
            }
            let tape = Tape::new();
            let vars: Vec<Var> = unflatten(inputs, &x[n_w..]).into_iter().map(|t| tape.constant(t)).collect();
            f(&m, &tape, &vars).0.value().item().unwrap()
        },
        &x,
    );
    rel_err(&ad, &numeric)
}

fn random(rng: &mut Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| lo + (hi - lo) * rng.uniform()).collect()).unwrap()
}

fn dims(rng: &mut Rng) -> (usize, usize) {
    (1 + rng.below(3), 1 + rng.below(4))
}

/// Contracts `v` with fixed random weights so every output entry matters.
fn project<'t>(tape: &'t Tape, v: Var<'t>, w: &Tensor) -> Var<'t> {
    v.mul(tape.constant(w.clone())).unwrap().sum().unwrap()
}

fn weights_like(rng: &mut Rng, shape: &[usize]) -> Tensor {
    random(rng, shape[0], shape[1], -1.0, 1.0)
}

/// Every differentiable tape operation, `instances` random cases each.
pub fn primitives(instances: usize, seed: u64) -> Vec<(&'static str, f64)> {
    type Case = (&'static str, fn(&mut Rng) -> (Vec<Tensor>, Box<Loss>));
    let cases: Vec<Case> = vec![
        ("add", |r| binary(r, -2.0, 2.0, |a, b| a.add(b))),
        ("sub", |r| binary(r, -2.0, 2.0, |a, b| a.sub(b))),
        ("mul", |r| binary(r, -2.0, 2.0, |a, b| a.mul(b))),
        ("div", |r| {
            let (n, m) = dims(r);
            let w = weights_like(r, &[n, m]);
            let mut b = random(r, n, m, 0.5, 2.0);
            if r.uniform() < 0.5 {
                b = b.map(|v| -v);
            }
            (vec![random(r, n, m, -2.0, 2.0), b], Box::new(move |t, v| project(t, v[0].div(v[1]).unwrap(), &w)))
        }),
        ("add_row", |r| {
            let (n, m) = dims(r);
            let w = weights_like(r, &[n, m]);
            (
                vec![random(r, n, m, -2.0, 2.0), random(r, 1, m, -2.0, 2.0)],
                Box::new(move |t, v| project(t, v[0].add_row(v[1]).unwrap(), &w)),
            )
        }),
        ("matmul", |r| {
            let (n, k) = dims(r);
            let m = 1 + r.below(4);
            let w = weights_like(r, &[n, m]);
            (
                vec![random(r, n, k, -2.0, 2.0), random(r, k, m, -2.0, 2.0)],
                Box::new(move |t, v| project(t, v[0].matmul(v[1]).unwrap(), &w)),
            )
        }),
        ("scale", |r| {
            let c = 4.0 * r.uniform() - 2.0;
            unary(r, -2.0, 2.0, move |a| a.scale(c))
        }),
        ("neg", |r| unary(r, -2.0, 2.0, |a| a.neg())),
        ("add_scalar", |r| {
            let c = 4.0 * r.uniform() - 2.0;
            unary(r, -2.0, 2.0, move |a| a.add_scalar(c))
        }),
        ("exp", |r| unary(r, -2.0, 2.0, |a| a.exp())),
        ("log", |r| unary(r, 0.1, 5.0, |a| a.log())),
        ("tanh", |r| unary(r, -3.0, 3.0, |a| a.tanh())),
        ("sigmoid", |r| unary(r, -4.0, 4.0, |a| a.sigmoid())),
        ("erf", |r| unary(r, -2.5, 2.5, |a| a.erf())),
        ("square", |r| unary(r, -2.0, 2.0, |a| a.square())),
        ("sum", |r| {
            let (n, m) = dims(r);
            let c = 4.0 * r.uniform() - 2.0;
            (vec![random(r, n, m, -2.0, 2.0)], Box::new(move |_, v| v[0].sum().unwrap().square().unwrap().scale(c).unwrap()))
        }),
        ("mean", |r| {
            let (n, m) = dims(r);
            (vec![random(r, n, m, -2.0, 2.0)], Box::new(|_, v| v[0].mean().unwrap().exp().unwrap()))
        }),
        ("sum_cols", |r| reducing(r, |a| a.sum_cols())),
        ("logsumexp_cols", |r| reducing(r, |a| a.logsumexp_cols())),
        ("slice_cols", |r| {
            let (n, m) = dims(r);
            let start = r.below(m);
            let end = start + 1 + r.below(m - start);
            let w = weights_like(r, &[n, end - start]);
            (vec![random(r, n, m, -2.0, 2.0)], Box::new(move |t, v| project(t, v[0].slice_cols(start, end).unwrap().square().unwrap(), &w)))
        }),
        ("concat_cols", |r| {
            let n = 1 + r.below(3);
            let (a, b) = (1 + r.below(3), 1 + r.below(3));
            let w = weights_like(r, &[n, a + b]);
            (
                vec![random(r, n, a, -2.0, 2.0), random(r, n, b, -2.0, 2.0)],
                Box::new(move |t, v| project(t, Var::concat_cols(&[v[0], v[1]]).unwrap().square().unwrap(), &w)),
            )
        }),
        ("permute_cols", |r| {
            let (n, m) = dims(r);
            let perm = r.permutation(m);
            let w = weights_like(r, &[n, m]);
            (vec![random(r, n, m, -2.0, 2.0)], Box::new(move |t, v| project(t, v[0].permute_cols(&perm).unwrap().square().unwrap(), &w)))
        }),
        ("reverse_permutation", |r| {
            let (n, m) = dims(r);
            let layer = ReversePermutation::new(m);
            let w = weights_like(r, &[n, m]);
            (vec![random(r, n, m, -2.0, 2.0)], Box::new(move |t, v| project(t, layer.apply_var(v[0]).unwrap().square().unwrap(), &w)))
        }),
        ("broadcast", |r| {
            let (n, m) = dims(r);
            let w = weights_like(r, &[n, m]);
            (
                vec![random(r, 1, 1, -2.0, 2.0)],
                Box::new(move |t, v| project(t, v[0].broadcast(vec![n, m]).unwrap().exp().unwrap(), &w)),
            )
        }),
        ("normal_log_pdf", |r| {
            let (n, m) = dims(r);
            let w = weights_like(r, &[n, m]);
            (
                vec![random(r, n, m, -2.0, 2.0), random(r, n, m, -2.0, 2.0), random(r, n, m, -1.0, 1.0)],
                Box::new(move |t, v| project(t, v[0].normal_log_pdf(v[1], v[2]).unwrap(), &w)),
            )
        }),
        ("std_normal_log_pdf", |r| unary(r, -3.0, 3.0, |a| a.std_normal_log_pdf())),
    ];
    cases
        .into_iter()
        .enumerate()
        .map(|(k, (name, make))| {
            let mut rng = Rng::stream(seed, &[k as u64]);
            let worst = (0..instances)
                .map(|_| {
                    let (inputs, f) = make(&mut rng);
                    check_inputs(&inputs, f.as_ref())
                })
                .fold(0.0, f64::max);
            (name, worst)
        })
        .collect()
}

fn unary(
    r: &mut Rng,
    lo: f64,
    hi: f64,
    op: impl for<'t> Fn(Var<'t>) -> ssnl_core::Result<Var<'t>> + 'static,
) -> (Vec<Tensor>, Box<Loss>) {
    let (n, m) = dims(r);
    let w = weights_like(r, &[n, m]);
    (vec![random(r, n, m, lo, hi)], Box::new(move |t, v| project(t, op(v[0]).unwrap(), &w)))
}

fn binary(
    r: &mut Rng,
    lo: f64,
    hi: f64,
    op: impl for<'t> Fn(Var<'t>, Var<'t>) -> ssnl_core::Result<Var<'t>> + 'static,
) -> (Vec<Tensor>, Box<Loss>) {
    let (n, m) = dims(r);
    let w = weights_like(r, &[n, m]);
    (
        vec![random(r, n, m, lo, hi), random(r, n, m, lo, hi)],
        Box::new(move |t, v| project(t, op(v[0], v[1]).unwrap(), &w)),
    )
}

fn reducing(
    r: &mut Rng,
    op: impl for<'t> Fn(Var<'t>) -> ssnl_core::Result<Var<'t>> + 'static,
) -> (Vec<Tensor>, Box<Loss>) {
    let (n, m) = dims(r);
    let w = weights_like(r, &[n, 1]);
    (vec![random(r, n, m, -2.0, 2.0)], Box::new(move |t, v| project(t, op(v[0]).unwrap(), &w)))
}

fn hidden(rng: &mut Rng) -> Vec<usize> {
    (0..1 + rng.below(2)).map(|_| 3 + rng.below(6)).collect()
}

pub fn mlp(instances: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    (0..instances)
        .map(|_| {
            let mut widths = vec![1 + rng.below(4)];
            widths.extend(hidden(&mut rng));
            widths.push(1 + rng.below(4));
            let net = Mlp::new(&widths, &mut rng).unwrap();
            let n = 1 + rng.below(3);
            let x = random(&mut rng, n, widths[0], -2.0, 2.0);
            let w = weights_like(&mut rng, &[n, *widths.last().unwrap()]);
            check_module(&net, Mlp::parameters, Mlp::parameters_mut, &[x], &move |m, t, v| {
                let b = m.bind(t, true);
                (project(t, b.forward(v[0]).unwrap(), &w), b.parameters())
            })
        })
        .fold(0.0, f64::max)
}

pub fn made(instances: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    (0..instances)
        .map(|_| {
            let d = 1 + rng.below(4);
            let c = rng.below(3);
            let net = Made::new(d, &hidden(&mut rng), c, &rng.permutation(d), &mut rng).unwrap();
            let net = jitter(net, Made::parameters_mut, &mut rng);
            let n = 1 + rng.below(3);
            let mut inputs = vec![random(&mut rng, n, d, -2.0, 2.0)];
            if c > 0 {
                inputs.push(random(&mut rng, n, c, -2.0, 2.0));
            }
            let (w1, w2) = (weights_like(&mut rng, &[n, d]), weights_like(&mut rng, &[n, d]));
            check_module(&net, Made::parameters, Made::parameters_mut, &inputs, &move |m, t, v| {
                let b = m.bind(t, true);
                let (shift, log_scale) = b.forward(v[0], v.get(1).copied()).unwrap();
                let loss = project(t, shift, &w1).add(project(t, log_scale, &w2)).unwrap();
                (loss, b.parameters())
            })
        })
        .fold(0.0, f64::max)
}

pub fn maf(instances: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    (0..instances)
        .map(|_| {
            let d = 1 + rng.below(4);
            let c = rng.below(3);
            let layer = AffineMaf::new(d, c, &hidden(&mut rng), &mut rng).unwrap();
            let layer = jitter(layer, |l| l.conditioner_mut().parameters_mut(), &mut rng);
            let n = 1 + rng.below(3);
            let mut inputs = vec![random(&mut rng, n, d, -2.0, 2.0)];
            if c > 0 {
                inputs.push(random(&mut rng, n, c, -2.0, 2.0));
            }
            let (w1, w2) = (weights_like(&mut rng, &[n, d]), weights_like(&mut rng, &[n, 1]));
            check_module(
                &layer,
                |l| l.conditioner().parameters(),
                |l| l.conditioner_mut().parameters_mut(),
                &inputs,
                &move |m, t, v| {
                    let b = m.bind(t, true);
                    let (z, log_det) = b.inverse(v[0], v.get(1).copied()).unwrap();
                    (project(t, z, &w1).add(project(t, log_det, &w2)).unwrap(), b.parameters())
                },
            )
        })
        .fold(0.0, f64::max)
}

pub fn surjection(instances: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    (0..instances)
        .map(|_| {
            let d = 2 + rng.below(4);
            let keep = 1 + rng.below(d - 1);
            let c = rng.below(3);
            let layer = Surjection::new(d, keep, c, &hidden(&mut rng), &hidden(&mut rng), &mut rng).unwrap();
            let layer = jitter(layer, Surjection::parameters_mut, &mut rng);
            let n = 1 + rng.below(3);
            let mut inputs = vec![random(&mut rng, n, d, -2.0, 2.0)];
            if c > 0 {
                inputs.push(random(&mut rng, n, c, -2.0, 2.0));
            }
            let (w1, w2) = (weights_like(&mut rng, &[n, keep]), weights_like(&mut rng, &[n, 1]));
            check_module(&layer, Surjection::parameters, Surjection::parameters_mut, &inputs, &move |m, t, v| {
                let b = m.bind(t, true);
                let (z, contribution) = b.inverse_and_contribution(v[0], v.get(1).copied()).unwrap();
                (project(t, z, &w1).add(project(t, contribution, &w2)).unwrap(), b.parameters())
            })
        })
        .fold(0.0, f64::max)
}

/// Whole stacks, alternating bijective-only and surjective architectures.
pub fn stack(instances: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    (0..instances)
        .map(|i| {
            let d = 2 + rng.below(3);
            let p = 1 + rng.below(2);
            let spec = FlowSpec {
                input_dim: d,
                context_dim: p,
                n_flow_layers: 2 + rng.below(3),
                hidden: hidden(&mut rng),
                decoder_hidden: hidden(&mut rng),
                surjection: (i % 2 == 1).then_some((1, 0.5)),
            };
            let s = FlowStack::build(&spec, &mut rng).unwrap();
            let s = jitter(s, FlowStack::parameters_mut, &mut rng);
            let n = 1 + rng.below(2);
            let inputs = [random(&mut rng, n, d, -2.0, 2.0), random(&mut rng, n, p, -2.0, 2.0)];
            let w = weights_like(&mut rng, &[n, 1]);
            check_module(&s, FlowStack::parameters, FlowStack::parameters_mut, &inputs, &move |m, t, v| {
                let b = m.bind(t, true);
                (project(t, b.log_prob_standardized(v[0], Some(v[1])).unwrap(), &w), b.parameters())
            })
        })
        .fold(0.0, f64::max)
}

/// The exact OU log-likelihood with respect to the parameters, at prior
/// draws and series simulated from them.
pub fn ou_log_likelihood(instances: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    (0..instances)
        .map(|i| {
            let ou = Ou::new(if i % 2 == 0 { 10 } else { 100 }).unwrap();
            let theta = ou.prior().sample(&mut rng);
            let y = ou.simulate(&theta, &mut rng).unwrap().y;
            check_inputs(&[Tensor::row(theta)], &move |t, v| ou_log_likelihood_var(t, &ou, &y, v[0]).unwrap())
        })
        .fold(0.0, f64::max)
}

/// Random weights: fresh networks start with small or zero output layers,
/// which would leave parts of the gradient trivially zero.
fn jitter<M>(mut m: M, weights_mut: fn(&mut M) -> Vec<&mut Tensor>, rng: &mut Rng) -> M {
    for w in weights_mut(&mut m) {
        let noise: Vec<f64> = (0..w.len()).map(|_| 0.3 * rng.normal()).collect();
        *w = Tensor::new(w.shape().to_vec(), w.data().iter().zip(noise).map(|(a, b)| a + b).collect()).unwrap();
    }
    m
}
