//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use ssnl_core::numeric::{Rng, Tape, Tensor, Var};

/// Central finite-difference gradient of `f` at `x`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + h;
            let fp = f(&xp);
            xp[i] = orig - h;
            let fm = f(&xp);
            xp[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)` (0 when both vanish).
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}

/// Autodiff Jacobian `d out_k / d in_j` for a map on a single `[1, d]` row.
pub fn autodiff_jacobian(
    x: &[f64],
    f: impl for<'t> Fn(&'t Tape, Var<'t>) -> Var<'t>,
) -> Vec<Vec<f64>> {
    let tape = Tape::new();
    let xv = tape.param(Tensor::row(x.to_vec()));
    let out = f(&tape, xv);
    let m = out.shape()[1];
    (0..m)
        .map(|k| {
            let yk = out.slice_cols(k, k + 1).unwrap().sum().unwrap();
            tape.backward(yk).unwrap().wrt(xv).to_vec()
        })
        .collect()
}

/// log|det A| by Gaussian elimination with partial pivoting.
pub fn log_abs_det(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut acc = 0.0;
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[i][c].abs().partial_cmp(&a[j][c].abs()).unwrap())
            .unwrap();
        a.swap(c, p);
        let piv = a[c][c];
        acc += piv.abs().ln();
        for r in c + 1..n {
            let f = a[r][c] / piv;
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    acc
}

pub fn uniform_vec(rng: &mut Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| lo + (hi - lo) * rng.uniform()).collect()
}

/// Midpoint grid over `[lo, hi]^2` with spacing `step`, as rows `[x, y]`.
pub fn grid_2d(lo: f64, hi: f64, step: f64) -> (Tensor, f64) {
    let n = ((hi - lo) / step).round() as usize;
    let mut data = Vec::with_capacity(2 * n * n);
    for i in 0..n {
        for j in 0..n {
            data.push(lo + (i as f64 + 0.5) * step);
            data.push(lo + (j as f64 + 0.5) * step);
        }
    }
    (Tensor::matrix(n * n, 2, data).unwrap(), step * step)
}

/// Sample mean and unbiased variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() as f64 - 1.0);
    cov / (va * vb).sqrt()
}

pub mod gradcheck;

/// Numerical Jacobian `d out_k / d in_j` of `f` by central differences.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    let m = f(x).len();
    let mut jac = vec![vec![0.0; x.len()]; m];
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        let orig = xp[j];
        xp[j] = orig + h;
        let fp = f(&xp);
        xp[j] = orig - h;
        let fm = f(&xp);
        xp[j] = orig;
        for k in 0..m {
            jac[k][j] = (fp[k] - fm[k]) / (2.0 * h);
        }
    }
    jac
}

/// Largest `|J_kj|` over output `k` of a MADE (shift or log-scale of input
/// `k % d`) and inputs that must not influence it, plus the smallest
/// largest-allowed entry per output with at least one allowed input.
pub fn made_structure(d: usize, draws: usize, seed: u64) -> (f64, f64) {
    use ssnl_core::nets::Made;
    let mut rng = Rng::new(seed);
    let mut forbidden: f64 = 0.0;
    let mut allowed_min = f64::INFINITY;
    for _ in 0..draws {
        let order = rng.permutation(d);
        let mut net = Made::new(d, &[16, 16], 0, &order, &mut rng).unwrap();
        // redraw every weight the masks allow; masked entries stay zero
        let masks = net.masks().to_vec();
        for (l, w) in net.parameters_mut().into_iter().enumerate() {
            let fresh: Vec<f64> = (0..w.len()).map(|_| rng.normal()).collect();
            let fresh = match masks.get(l) {
                Some(m) => fresh.iter().zip(m.data().iter()).map(|(a, b)| a * b).collect(),
                None => fresh,
            };
            *w = Tensor::new(w.shape().to_vec(), fresh).unwrap();
        }
        let x = uniform_vec(&mut rng, d, -2.0, 2.0);
        let jac = fd_jacobian(
            |x| {
                let (s, l) = net.forward(&Tensor::row(x.to_vec()), None).unwrap();
                s.data().iter().chain(l.data().iter()).copied().collect()
            },
            &x,
            1e-4,
        );
        // position of each input in the autoregressive order
        let mut rank = vec![0; d];
        for (k, &i) in order.iter().enumerate() {
            rank[i] = k;
        }
        for (k, row) in jac.iter().enumerate() {
            let out = k % d;
            let mut best: f64 = 0.0;
            for (j, v) in row.iter().enumerate() {
                if rank[j] < rank[out] {
                    best = best.max(v.abs());
                } else {
                    forbidden = forbidden.max(v.abs());
                }
            }
            if rank[out] > 0 {
                allowed_min = allowed_min.min(best);
            }
        }
    }
    (forbidden, allowed_min)
}
