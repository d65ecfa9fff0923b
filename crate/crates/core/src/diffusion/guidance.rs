use serde::{Deserialize, Serialize};

use super::score_net::{Condition, ScoreNetwork};
use crate::error::{Error, Result};
use crate::tensor_core::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceConfig {
    /// Guidance strength `s`.
    pub s: f64,
    /// Probability of dropping the condition of a training sample.
    pub mask_prob: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self { s: 0.1, mask_prob: 0.1 }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.s >= 0.0 && self.s.is_finite()) {
            return Err(Error::InvalidArgument(format!("guidance strength must be >= 0, got {}", self.s)));
        }
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return Err(Error::InvalidArgument(format!(
                "mask_prob must lie in [0, 1], got {}",
                self.mask_prob
            )));
        }
        Ok(())
    }
}

/// Mixes an unconditional and a conditional prediction as
/// `(1 − s)·ε_uncond + s·ε_cond`.
pub fn combine_guided(uncond: &Tensor, cond: &Tensor, s: f64) -> Result<Tensor> {
    if uncond.shape() != cond.shape() {
        return Err(Error::Shape {
            op: "guided_score",
            left: uncond.shape().to_vec(),
            right: cond.shape().to_vec(),
        });
    }
    let data = uncond
        .data()
        .iter()
        .zip(cond.data())
        .map(|(&u, &c)| (1.0 - s) * u + s * c)
        .collect();
    Tensor::new(uncond.shape().to_vec(), data)
}

/// Classifier-free guided noise prediction: one unconditional and one
/// conditional pass of `net`.
pub fn guided_score(net: &ScoreNetwork, x_t: &Tensor, t: &[f64], c: &Tensor, s: f64) -> Result<Tensor> {
    let uncond = net.predict(x_t, t, None)?;
    let cond = net.predict(x_t, t, Some(Condition::all(c)))?;
    combine_guided(&uncond, &cond, s)
}
