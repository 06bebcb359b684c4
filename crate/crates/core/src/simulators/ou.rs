//! Ornstein–Uhlenbeck process observed on an equally spaced grid and
//! simulated through its exact Gaussian transition density.
//!
//! Parameters are `(long-run mean, reversion rate, volatility)`. The series
//! starts from `y0 = 0`; every observation is one transition of length
//! `span / (length - 1)` from the previous state.

use super::{check_obs, check_theta, Prior, PriorComponent, SimOutput, Simulator};
use crate::error::{Error, Result};
use crate::numeric::special::normal_log_pdf;
use crate::numeric::{Rng, Tape, Tensor, Var};

pub const DEFAULT_LENGTH: usize = 100;
const SPAN: f64 = 10.0;
const Y0: f64 = 0.0;

#[derive(Debug, Clone)]
pub struct Ou {
    prior: Prior,
    length: usize,
}

impl Ou {
    pub fn new(length: usize) -> Result<Self> {
        if length == 0 {
            return Err(Error::InvalidParameter("OU length must be positive".into()));
        }
        let prior = Prior::new(vec![
            PriorComponent::Uniform { low: 0.0, high: 10.0 },
            PriorComponent::Uniform { low: 0.0, high: 5.0 },
            PriorComponent::Uniform { low: 0.0, high: 2.0 },
        ])?;
        Ok(Self { prior, length })
    }

    pub fn length(&self) -> usize {
        self.length
    }

    /// Time between consecutive observations.
    pub fn gap(&self) -> f64 {
        if self.length > 1 {
            SPAN / (self.length - 1) as f64
        } else {
            SPAN
        }
    }

    /// Mean and variance of `y_t | y_s = prev` for a gap `dt = t - s`.
    pub fn transition(theta: &[f64], prev: f64, dt: f64) -> Result<(f64, f64)> {
        let (mean, rate, vol) = (theta[0], theta[1], theta[2]);
        if !(rate > 0.0) {
            return Err(Error::Simulator {
                model: "ou".into(),
                reason: format!("reversion rate must be positive, got {rate}"),
            });
        }
        let decay = (-rate * dt).exp();
        let m = mean + (prev - mean) * decay;
        let v = vol * vol / (2.0 * rate) * -(-2.0 * rate * dt).exp_m1();
        Ok((m, v))
    }
}

impl Simulator for Ou {
    fn id(&self) -> &'static str {
        "ou"
    }

    fn prior(&self) -> &Prior {
        &self.prior
    }

    fn obs_dim(&self) -> usize {
        self.length
    }

    fn simulate(&self, theta: &[f64], rng: &mut Rng) -> Result<SimOutput> {
        check_theta(self.id(), theta, 3)?;
        let (_, v) = Self::transition(theta, Y0, self.gap())?;
        let sd = v.sqrt();
        let mut y = Vec::with_capacity(self.length);
        let mut prev = Y0;
        for _ in 0..self.length {
            let (m, _) = Self::transition(theta, prev, self.gap())?;
            prev = m + sd * rng.normal();
            y.push(prev);
        }
        Ok(SimOutput::plain(y))
    }

    fn has_likelihood(&self) -> bool {
        true
    }

    fn log_likelihood(&self, y: &[f64], theta: &[f64]) -> Result<f64> {
        check_theta(self.id(), theta, 3)?;
        check_obs(self.id(), y, self.length)?;
        let dt = self.gap();
        let (_, v) = Self::transition(theta, Y0, dt)?;
        let sd = v.sqrt();
        let mut prev = Y0;
        let mut lp = 0.0;
        for &yt in y {
            let (m, _) = Self::transition(theta, prev, dt)?;
            lp += normal_log_pdf(yt, m, sd);
            prev = yt;
        }
        Ok(lp)
    }
}

/// The OU log-likelihood of one series `y` as a differentiable function of
/// a `[1, 3]` parameter variable.
pub fn ou_log_likelihood_var<'t>(tape: &'t Tape, ou: &Ou, y: &[f64], theta: Var<'t>) -> Result<Var<'t>> {
    if theta.shape() != [1, 3] {
        return Err(Error::shape("ou_log_likelihood", format!("theta {:?}, expected [1, 3]", theta.shape())));
    }
    check_obs("ou", y, ou.length)?;
    let t = y.len();
    let dt = ou.gap();
    let row = vec![1, t];
    let mean = theta.slice_cols(0, 1)?.broadcast(row.clone())?;
    let rate = theta.slice_cols(1, 2)?;
    let vol = theta.slice_cols(2, 3)?;

    let prev: Vec<f64> = std::iter::once(Y0).chain(y[..t - 1].iter().copied()).collect();
    let prev = tape.constant(Tensor::row(prev));
    let decay = rate.scale(-dt)?.exp()?.broadcast(row.clone())?;
    let mu = mean.add(prev.sub(mean)?.mul(decay)?)?;
    // variance = vol^2 / (2 rate) * (1 - exp(-2 rate dt))
    let var = vol
        .square()?
        .div(rate.scale(2.0)?)?
        .mul(rate.scale(-2.0 * dt)?.exp()?.neg()?.add_scalar(1.0)?)?;
    let log_scale = var.log()?.scale(0.5)?.broadcast(row)?;
    tape.constant(Tensor::row(y.to_vec()))
        .normal_log_pdf(mu, log_scale)?
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_point_mean() {
        let (m, _) = Ou::transition(&[3.0, 1.5, 0.5], 3.0, 0.7).unwrap();
        assert_eq!(m, 3.0);
    }

    #[test]
    fn long_gap_variance_is_stationary() {
        let (_, v) = Ou::transition(&[5.0, 1.0, 1.0], 0.0, 20.0).unwrap();
        assert!((v - 0.5).abs() < 1e-8);
    }

    #[test]
    fn nonpositive_rate_rejected() {
        assert!(Ou::transition(&[1.0, 0.0, 1.0], 0.0, 1.0).is_err());
        let ou = Ou::new(10).unwrap();
        assert!(ou.simulate(&[1.0, -1.0, 1.0], &mut Rng::new(0)).is_err());
    }

    #[test]
    fn tape_likelihood_matches_scalar() {
        let ou = Ou::new(12).unwrap();
        let theta = [4.0, 0.8, 1.3];
        let y = ou.simulate(&theta, &mut Rng::new(3)).unwrap().y;
        let tape = Tape::new();
        let v = tape.param(Tensor::row(theta.to_vec()));
        let lp = ou_log_likelihood_var(&tape, &ou, &y, v).unwrap().value().item().unwrap();
        let exact = ou.log_likelihood(&y, &theta).unwrap();
        assert!((lp - exact).abs() < 1e-9 * exact.abs().max(1.0));
    }
}
