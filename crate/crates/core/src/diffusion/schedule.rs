//! Continuous-time variance-preserving noise schedule.
//!
//! With a linear β(t) = β_min + t(β_max − β_min):
//!
//! ```text
//! log ᾱ(t) = −¼ t² (β_max − β_min) − ½ t β_min
//! σ(t)     = √(1 − ᾱ(t)²)
//! λ(t)     = log ᾱ(t) − log σ(t)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// λ reported at t = 0, where σ = 0.
pub const LAMBDA_AT_ZERO: f64 = 700.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSchedule {
    pub beta_min: f64,
    pub beta_max: f64,
    /// Smallest time used for training and sampling.
    pub t_eps: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            beta_min: 0.1,
            beta_max: 20.0,
            t_eps: 1e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleValues {
    pub alpha: f64,
    pub sigma: f64,
    pub lambda: f64,
}

impl NoiseSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_min > 0.0 && self.beta_max > self.beta_min) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < beta_min < beta_max, got ({}, {})",
                self.beta_min, self.beta_max
            )));
        }
        if !(self.t_eps > 0.0 && self.t_eps < 1.0) {
            return Err(Error::InvalidArgument(format!("t_eps must lie in (0, 1), got {}", self.t_eps)));
        }
        Ok(())
    }

    pub fn log_alpha(&self, t: f64) -> f64 {
        -0.25 * t * t * (self.beta_max - self.beta_min) - 0.5 * t * self.beta_min
    }

    pub fn alpha(&self, t: f64) -> f64 {
        self.log_alpha(t).exp()
    }

    pub fn sigma(&self, t: f64) -> f64 {
        (-(2.0 * self.log_alpha(t)).exp_m1()).sqrt()
    }

    pub fn lambda(&self, t: f64) -> f64 {
        let sigma = self.sigma(t);
        if sigma == 0.0 {
            return LAMBDA_AT_ZERO;
        }
        self.log_alpha(t) - sigma.ln()
    }

    /// Drift coefficient f(t) = d log ᾱ / dt.
    pub fn drift(&self, t: f64) -> f64 {
        -0.5 * t * (self.beta_max - self.beta_min) - 0.5 * self.beta_min
    }

    /// Squared diffusion coefficient g²(t) = dσ²/dt − 2 f(t) σ², which for
    /// a VP schedule equals β(t).
    pub fn diffusion_sq(&self, t: f64) -> f64 {
        let f = self.drift(t);
        let alpha_sq = self.alpha(t).powi(2);
        let sigma_sq = 1.0 - alpha_sq;
        let dsigma_sq = -2.0 * alpha_sq * f;
        dsigma_sq - 2.0 * f * sigma_sq
    }

    pub fn values(&self, t: f64) -> Result<ScheduleValues> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidArgument(format!("time {t} outside [0, 1]")));
        }
        Ok(ScheduleValues {
            alpha: self.alpha(t),
            sigma: self.sigma(t),
            lambda: self.lambda(t),
        })
    }

    /// Closed-form inverse of λ(t).
    pub fn inverse_lambda(&self, lambda: f64) -> f64 {
        let db = self.beta_max - self.beta_min;
        // log(1 + e^{-2λ}) computed stably
        let softplus = if lambda < -20.0 {
            -2.0 * lambda + (2.0 * lambda).exp().ln_1p()
        } else {
            (-2.0 * lambda).exp().ln_1p()
        };
        let tmp = 2.0 * db * softplus;
        let delta = self.beta_min * self.beta_min + tmp;
        tmp / (delta.sqrt() + self.beta_min) / db
    }

    /// x_t = ᾱ(t) x₀ + σ(t) ε.
    pub fn q_sample(&self, x0: &[f64], t: f64, eps: &[f64]) -> Result<Vec<f64>> {
        if x0.len() != eps.len() {
            return Err(Error::Shape {
                op: "q_sample",
                left: vec![x0.len()],
                right: vec![eps.len()],
            });
        }
        let v = self.values(t)?;
        Ok(x0.iter().zip(eps).map(|(&x, &e)| v.alpha * x + v.sigma * e).collect())
    }
}
