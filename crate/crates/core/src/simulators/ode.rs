//! Dormand–Prince 5(4) integrator with step-size control and dense output.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OdeConfig {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for OdeConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-6,
            atol: 1e-8,
            max_steps: 100_000,
        }
    }
}

impl OdeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0 && self.max_steps > 0) {
            return Err(Error::InvalidParameter(format!("ODE tolerances must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// States at the requested times plus the number of accepted steps.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeSolution {
    pub states: Vec<Vec<f64>>,
    pub steps: usize,
}

const C: [f64; 6] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0];
const A: [[f64; 5]; 6] = [
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0],
];
const B: [f64; 6] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0];
/// Difference between the 5th- and embedded 4th-order weights (7 stages).
const E: [f64; 7] = [
    -71.0 / 57600.0,
    0.0,
    71.0 / 16695.0,
    -71.0 / 1920.0,
    17253.0 / 339200.0,
    -22.0 / 525.0,
    1.0 / 40.0,
];
/// Continuous-extension polynomial coefficients (powers 1..4 of the step fraction).
const P: [[f64; 4]; 7] = [
    [1.0, -8048581381.0 / 2820520608.0, 8663915743.0 / 2820520608.0, -12715105075.0 / 11282082432.0],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200.0 / 32700410799.0, -68118460800.0 / 10900136933.0, 87487479700.0 / 32700410799.0],
    [0.0, -1754552775.0 / 470086768.0, 14199869525.0 / 1410260304.0, -10690763975.0 / 1880347072.0],
    [0.0, 127303824393.0 / 49829197408.0, -318862633887.0 / 49829197408.0, 701980252875.0 / 199316789632.0],
    [0.0, -282668133.0 / 205662961.0, 2019193451.0 / 616988883.0, -1453857185.0 / 822651844.0],
    [0.0, 40617522.0 / 29380423.0, -110615467.0 / 29380423.0, 69997945.0 / 29380423.0],
];

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;

/// Integrate `dy/dt = field(t, y)` from `(t_grid[0], y0)` and report the
/// state at every grid time. `field` writes the derivative into its last
/// argument.
pub fn dopri_integrate<F>(mut field: F, y0: &[f64], t_grid: &[f64], cfg: &OdeConfig) -> Result<OdeSolution>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    cfg.validate()?;
    let n = y0.len();
    if t_grid.is_empty() {
        return Ok(OdeSolution { states: vec![], steps: 0 });
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solver("initial state is not finite".into()));
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) || t_grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::Solver("time grid must be finite and strictly increasing".into()));
    }
    let t_end = *t_grid.last().unwrap();
    let mut out = Vec::with_capacity(t_grid.len());
    out.push(y0.to_vec());
    let mut next = 1;

    let mut t = t_grid[0];
    let mut y = y0.to_vec();
    let mut k = vec![vec![0.0; n]; 7];
    field(t, &y, &mut k[0]);
    let mut h = initial_step(&mut field, t, &y, &k[0], t_end - t, cfg);
    let mut ytmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    let mut steps = 0;

    while next < t_grid.len() {
        if steps >= cfg.max_steps {
            return Err(Error::Solver(format!("exceeded {} steps at t = {t}", cfg.max_steps)));
        }
        let min_h = 16.0 * f64::EPSILON * t.abs().max(1.0);
        if h < min_h {
            return Err(Error::Solver(format!("step size underflow at t = {t}")));
        }
        let last = h >= t_end - t;
        if last {
            h = t_end - t;
        }

        for s in 1..6 {
            for i in 0..n {
                let mut acc = y[i];
                for j in 0..s {
                    acc += h * A[s][j] * k[j][i];
                }
                ytmp[i] = acc;
            }
            let (_, rest) = k.split_at_mut(s);
            field(t + C[s] * h, &ytmp, &mut rest[0]);
        }
        for i in 0..n {
            let mut acc = y[i];
            for j in 0..6 {
                acc += h * B[j] * k[j][i];
            }
            ynew[i] = acc;
        }
        {
            let (_, rest) = k.split_at_mut(6);
            field(t + h, &ynew, &mut rest[0]);
        }

        let mut err = 0.0;
        for i in 0..n {
            let mut e = 0.0;
            for j in 0..7 {
                e += E[j] * k[j][i];
            }
            let scale = cfg.atol + y[i].abs().max(ynew[i].abs()) * cfg.rtol;
            err += (h * e / scale).powi(2);
        }
        let err = (err / n.max(1) as f64).sqrt();
        if !err.is_finite() || ynew.iter().any(|v| !v.is_finite()) {
            h *= MIN_FACTOR;
            steps += 1;
            continue;
        }

        if err <= 1.0 {
            let t_new = if last { t_end } else { t + h };
            while next < t_grid.len() && t_grid[next] <= t_new {
                let sigma = ((t_grid[next] - t) / h).min(1.0);
                out.push(dense(&y, &k, h, sigma));
                next += 1;
            }
            t = t_new;
            y.copy_from_slice(&ynew);
            let (first, rest) = k.split_at_mut(1);
            first[0].copy_from_slice(&rest[5]);
            steps += 1;
            let factor = if err == 0.0 {
                MAX_FACTOR
            } else {
                (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
            };
            h *= factor;
        } else {
            h *= (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, 1.0);
            steps += 1;
        }
    }
    Ok(OdeSolution { states: out, steps })
}

fn dense(y: &[f64], k: &[Vec<f64>], h: f64, sigma: f64) -> Vec<f64> {
    let powers = [sigma, sigma * sigma, sigma.powi(3), sigma.powi(4)];
    let w: Vec<f64> = P
        .iter()
        .map(|row| row.iter().zip(&powers).map(|(a, b)| a * b).sum())
        .collect();
    (0..y.len())
        .map(|i| y[i] + h * (0..7).map(|j| w[j] * k[j][i]).sum::<f64>())
        .collect()
}

/// Starting step from the local scale of the solution and its derivative.
fn initial_step<F>(field: &mut F, t: f64, y: &[f64], f0: &[f64], span: f64, cfg: &OdeConfig) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len().max(1) as f64;
    let scale: Vec<f64> = y.iter().map(|v| cfg.atol + v.abs() * cfg.rtol).collect();
    let rms = |v: &mut dyn Iterator<Item = f64>| (v.map(|x| x * x).sum::<f64>() / n).sqrt();
    let d0 = rms(&mut y.iter().zip(&scale).map(|(a, s)| a / s));
    let d1 = rms(&mut f0.iter().zip(&scale).map(|(a, s)| a / s));
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let y1: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + h0 * b).collect();
    let mut f1 = vec![0.0; y.len()];
    field(t + h0, &y1, &mut f1);
    let d2 = rms(&mut f1.iter().zip(f0).zip(&scale).map(|((a, b), s)| (a - b) / s)) / h0;
    let h1 = if d1 <= 1e-15 && d2 <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    let h = (100.0 * h0).min(h1).min(span);
    if h.is_finite() && h > 0.0 {
        h
    } else {
        span.min(1e-6)
    }
}
