//! Extrapolation weights for the accelerated method.

use ndarray::Array2;

use crate::error::{OtError, Result};

/// Root of `τ1 γ θ^λ = q (1 - θ)` in `(0, 1)`, with `q = π c_k`.
///
/// `λ = 1` and `λ = 2` use closed forms; other exponents use Newton steps
/// safeguarded by bisection.
pub fn solve_theta(tau1: f64, gamma: f64, pi_ck: f64, lambda: f64) -> f64 {
    let a = tau1 * gamma;
    let q = pi_ck;
    debug_assert!(a > 0.0 && q > 0.0 && lambda >= 1.0);
    if lambda == 1.0 {
        return q / (a + q);
    }
    if lambda == 2.0 {
        // Rationalized root of a θ² + q θ - q = 0.
        return 2.0 * q / (q + (q * q + 4.0 * a * q).sqrt());
    }
    let residual = |t: f64| a * t.powf(lambda) - q * (1.0 - t);
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut t = 0.5;
    for _ in 0..200 {
        let r = residual(t);
        if r.abs() <= 1e-15 * a.max(q).max(1.0) {
            break;
        }
        if r > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let slope = a * lambda * t.powf(lambda - 1.0) + q;
        let newton = t - r / slope;
        t = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    t
}

/// `τ1 γ θ^λ - π c_k (1 - θ)`.
pub fn theta_residual(tau1: f64, gamma: f64, pi_ck: f64, lambda: f64, theta: f64) -> f64 {
    tau1 * gamma * theta.powf(lambda) - pi_ck * (1.0 - theta)
}

/// Estimate-sequence bookkeeping: the minimizer `z` (in mirror coordinates),
/// the product `c_k = Π (1 - θ_i)`, and the current `τ1`.
#[derive(Debug, Clone, PartialEq)]
pub struct AcceleratorState {
    /// `∇φ(z^k)`.
    pub z_mirror: Array2<f64>,
    pub c: f64,
    /// Last weight used, `None` before the first step.
    pub theta: Option<f64>,
    pub tau1: f64,
    pub lambda: f64,
    pub adaptive_tau1: bool,
}

impl AcceleratorState {
    pub fn new(z_mirror: Array2<f64>, tau1: f64, lambda: f64, adaptive_tau1: bool) -> Self {
        Self {
            z_mirror,
            c: 1.0,
            theta: None,
            tau1,
            lambda,
            adaptive_tau1,
        }
    }

    /// Weight for the next step. With `adaptive_tau1`, `τ1` is doubled once
    /// when `τ1 θ < 0.1` and `θ` is solved again.
    pub fn next_theta(&mut self, gamma: f64, pi: f64) -> f64 {
        let q = pi * self.c;
        let mut theta = solve_theta(self.tau1, gamma, q, self.lambda);
        if self.adaptive_tau1 && self.tau1 * theta < 0.1 {
            self.tau1 *= 2.0;
            theta = solve_theta(self.tau1, gamma, q, self.lambda);
        }
        theta
    }

    /// `∇φ(z⁺) = ∇φ(z) + (∇φ(x⁺) - ∇φ(y)) / (τ1 θ)` and `c⁺ = (1 - θ) c`.
    pub fn advance(&mut self, theta: f64, x_next_mirror: &Array2<f64>, y_mirror: &Array2<f64>) -> Result<()> {
        if !(theta > 0.0 && theta < 1.0) {
            return Err(OtError::Numerical(format!(
                "extrapolation weight {theta} outside (0, 1)"
            )));
        }
        let step = 1.0 / (self.tau1 * theta);
        ndarray::Zip::from(&mut self.z_mirror)
            .and(x_next_mirror)
            .and(y_mirror)
            .for_each(|z, &x, &y| *z += step * (x - y));
        if self.z_mirror.iter().any(|v| !v.is_finite()) {
            return Err(OtError::Numerical(
                "estimate-sequence minimizer left the finite range".into(),
            ));
        }
        self.c *= 1.0 - theta;
        self.theta = Some(theta);
        Ok(())
    }
}
