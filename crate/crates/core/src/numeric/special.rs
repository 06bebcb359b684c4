//! Scalar special functions.

use std::f64::consts::PI;

/// ln(2π)/2.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Gauss error function (musl's rational approximations, ~1 ulp).
pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

pub fn erf_derivative(x: f64) -> f64 {
    2.0 / PI.sqrt() * (-x * x).exp()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Shift-stabilised `ln Σ exp(x_i)`; `-inf` for an empty slice.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// ln N(x; mean, sd²).
pub fn normal_log_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - HALF_LN_2PI
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erf_fixed_points() {
        assert_eq!(erf(0.0), 0.0);
        assert!((erf(6.0) - 1.0).abs() < 1e-12);
        assert!((erf(-6.0) + 1.0).abs() < 1e-12);
        // erf(1) = 0.8427007929497149
        assert!((erf(1.0) - 0.842_700_792_949_714_9).abs() < 1.5e-7);
    }

    #[test]
    fn logsumexp_shift_identity() {
        // Naive evaluation is exact enough at small magnitudes.
        let small = [1.0, 2.0, -0.5];
        let naive = small.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((logsumexp(&small) - naive).abs() < 1e-14);
        // Shifting all inputs by c shifts the result by c.
        let shifted: Vec<f64> = small.iter().map(|x| x + 1000.0).collect();
        assert!((logsumexp(&shifted) - (naive + 1000.0)).abs() < 1e-10);
        assert!((logsumexp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!((logit(sigmoid(1.3)) - 1.3).abs() < 1e-12);
    }
}
