//! ODE-backed population models: Lotka–Volterra predator–prey dynamics with
//! log-normal observation noise, and an SIR epidemic observed through
//! binomial counts.

use rand_distr::Binomial;

use super::{check_theta, dopri_integrate, OdeConfig, Prior, PriorComponent, SimOutput, Simulator};
use crate::error::{Error, Result};
use crate::numeric::Rng;

pub const LV_DEFAULT_POINTS: usize = 50;
const LV_SPAN: f64 = 30.0;
const LV_INITIAL: [f64; 2] = [30.0, 1.0];
const LV_NOISE: f64 = 0.1;

const SIR_POPULATION: f64 = 1e6;
const SIR_POINTS: usize = 100;
const SIR_SPAN: f64 = 160.0;
const SIR_TRIALS: u64 = 1000;

fn linspace(end: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|i| end * i as f64 / (n - 1) as f64).collect()
}

fn check_nonnegative(model: &str, theta: &[f64]) -> Result<()> {
    if theta.iter().any(|&v| v < 0.0) {
        return Err(Error::Simulator {
            model: model.into(),
            reason: format!("rates must be non-negative, got {theta:?}"),
        });
    }
    Ok(())
}

fn solver_failure(model: &str, e: Error) -> Error {
    Error::Simulator {
        model: model.into(),
        reason: e.to_string(),
    }
}

/// Prey `X1` and predator `X2` with `dX1 = a X1 - b X1 X2`,
/// `dX2 = -c X2 + d X1 X2`.
#[derive(Debug, Clone)]
pub struct LotkaVolterra {
    prior: Prior,
    points: usize,
    ode: OdeConfig,
}

impl LotkaVolterra {
    /// `points` observations per species on `[0, 30]`.
    pub fn new(points: usize, ode: OdeConfig) -> Result<Self> {
        if points == 0 {
            return Err(Error::InvalidParameter("LV needs at least one time point".into()));
        }
        ode.validate()?;
        let prior = Prior::new(vec![
            PriorComponent::LogNormal { mu: -0.125, sigma: 0.5 },
            PriorComponent::LogNormal { mu: -3.0, sigma: 0.5 },
            PriorComponent::LogNormal { mu: -0.125, sigma: 0.5 },
            PriorComponent::LogNormal { mu: -3.0, sigma: 0.5 },
        ])?;
        Ok(Self { prior, points, ode })
    }

    pub fn times(&self) -> Vec<f64> {
        linspace(LV_SPAN, self.points)
    }

    pub fn initial_state() -> [f64; 2] {
        LV_INITIAL
    }

    /// Noise-free populations at the observation times.
    pub fn trajectory(&self, theta: &[f64]) -> Result<(Vec<[f64; 2]>, usize)> {
        check_theta(self.id(), theta, 4)?;
        check_nonnegative(self.id(), theta)?;
        let (a, b, c, d) = (theta[0], theta[1], theta[2], theta[3]);
        let sol = dopri_integrate(
            |_, x, dx| {
                dx[0] = a * x[0] - b * x[0] * x[1];
                dx[1] = -c * x[1] + d * x[0] * x[1];
            },
            &LV_INITIAL,
            &self.times(),
            &self.ode,
        )
        .map_err(|e| solver_failure(self.id(), e))?;
        Ok((sol.states.iter().map(|s| [s[0], s[1]]).collect(), sol.steps))
    }
}

impl Simulator for LotkaVolterra {
    fn id(&self) -> &'static str {
        "lv"
    }

    fn prior(&self) -> &Prior {
        &self.prior
    }

    fn obs_dim(&self) -> usize {
        2 * self.points
    }

    fn simulate(&self, theta: &[f64], rng: &mut Rng) -> Result<SimOutput> {
        let (states, steps) = self.trajectory(theta)?;
        if states.iter().any(|s| !(s[0] > 0.0 && s[1] > 0.0)) {
            return Err(Error::Simulator {
                model: self.id().into(),
                reason: "population left the positive orthant".into(),
            });
        }
        let mut y = Vec::with_capacity(2 * self.points);
        for species in 0..2 {
            for s in &states {
                y.push(s[species] * (LV_NOISE * rng.normal()).exp());
            }
        }
        Ok(SimOutput {
            y,
            solver_steps: Some(steps),
        })
    }
}

/// Susceptible–infectious–recovered epidemic in a closed population.
#[derive(Debug, Clone)]
pub struct Sir {
    prior: Prior,
    ode: OdeConfig,
}

impl Sir {
    pub fn new(ode: OdeConfig) -> Result<Self> {
        ode.validate()?;
        let prior = Prior::new(vec![
            PriorComponent::LogNormal { mu: 0.4f64.ln(), sigma: 0.5 },
            PriorComponent::LogNormal { mu: (1.0f64 / 8.0).ln(), sigma: 0.2 },
        ])?;
        Ok(Self { prior, ode })
    }

    pub fn times() -> Vec<f64> {
        linspace(SIR_SPAN, SIR_POINTS)
    }

    pub fn population() -> f64 {
        SIR_POPULATION
    }

    /// Infectious fraction `I / N` at the observation times.
    pub fn infectious_fraction(&self, theta: &[f64]) -> Result<(Vec<f64>, usize)> {
        check_theta(self.id(), theta, 2)?;
        check_nonnegative(self.id(), theta)?;
        let (beta, gamma) = (theta[0], theta[1]);
        let n = SIR_POPULATION;
        let sol = dopri_integrate(
            |_, x, dx| {
                let infection = beta * x[0] * x[1] / n;
                dx[0] = -infection;
                dx[1] = infection - gamma * x[1];
                dx[2] = gamma * x[1];
            },
            &[n - 1.0, 1.0, 0.0],
            &Self::times(),
            &self.ode,
        )
        .map_err(|e| solver_failure(self.id(), e))?;
        let frac = sol
            .states
            .iter()
            .map(|s| {
                let f = s[1] / n;
                if !(0.0..=1.0).contains(&f) {
                    log::debug!("sir: clamping infectious fraction {f}");
                }
                f.clamp(0.0, 1.0)
            })
            .collect();
        Ok((frac, sol.steps))
    }
}

impl Simulator for Sir {
    fn id(&self) -> &'static str {
        "sir"
    }

    fn prior(&self) -> &Prior {
        &self.prior
    }

    fn obs_dim(&self) -> usize {
        SIR_POINTS
    }

    fn simulate(&self, theta: &[f64], rng: &mut Rng) -> Result<SimOutput> {
        let (frac, steps) = self.infectious_fraction(theta)?;
        let mut y = Vec::with_capacity(SIR_POINTS);
        for p in frac {
            let b = Binomial::new(SIR_TRIALS, p).map_err(|e| Error::Simulator {
                model: "sir".into(),
                reason: e.to_string(),
            })?;
            let count = rng.sample(&b) as f64;
            y.push(count + rng.uniform_open());
        }
        Ok(SimOutput {
            y,
            solver_steps: Some(steps),
        })
    }
}
