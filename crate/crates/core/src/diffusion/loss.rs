use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::schedule::NoiseSchedule;
use super::score_net::{Condition, ScoreNetwork};
use crate::error::{Error, Result};
use crate::tensor_core::rng::standard_normal;
use crate::tensor_core::{ParamStore, Tape, Tensor, Var};

/// Norm applied to the noise residual.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossNorm {
    #[default]
    SquaredL2,
    L1,
}

/// The random draws of one DIM loss evaluation.
#[derive(Clone, Debug)]
pub struct DimDraws {
    pub t: Vec<f64>,
    pub eps: Tensor,
    pub keep: Vec<bool>,
}

impl DimDraws {
    pub fn sample(rows: usize, k: usize, schedule: &NoiseSchedule, mask_prob: f64, rng: &mut ChaCha8Rng) -> Self {
        let t = (0..rows).map(|_| rng.random_range(schedule.t_eps..=1.0)).collect();
        let eps = standard_normal(rng, &[rows, k]);
        let keep = (0..rows).map(|_| rng.random::<f64>() >= mask_prob).collect();
        Self { t, eps, keep }
    }
}

/// `x_t = ᾱ(t) x₀ + σ(t) ε` row by row.
pub fn q_sample_rows(schedule: &NoiseSchedule, x0: &Tensor, t: &[f64], eps: &Tensor) -> Result<Tensor> {
    if x0.shape() != eps.shape() || x0.rows() != t.len() {
        return Err(Error::Shape {
            op: "q_sample",
            left: x0.shape().to_vec(),
            right: eps.shape().to_vec(),
        });
    }
    let mut out = Vec::with_capacity(x0.numel());
    for (i, &ti) in t.iter().enumerate() {
        out.extend(schedule.q_sample(x0.row(i), ti, eps.row(i))?);
    }
    Tensor::new(x0.shape().to_vec(), out)
}

/// Mean over the batch of `||ε − ε_θ(x_t, t | c)||` (squared L2 or L1).
#[allow(clippy::too_many_arguments)]
pub fn dim_loss_with<'t>(
    tape: &'t Tape,
    net: &ScoreNetwork,
    store: &ParamStore,
    x0: &Tensor,
    cond: &Tensor,
    schedule: &NoiseSchedule,
    draws: &DimDraws,
    norm: LossNorm,
) -> Result<Var<'t>> {
    if x0.rows() == 0 {
        return Err(Error::Empty("diffusion loss needs a nonempty batch".into()));
    }
    let x_t = q_sample_rows(schedule, x0, &draws.t, &draws.eps)?;
    let pred = net.forward(
        tape,
        store,
        tape.constant(x_t),
        &draws.t,
        Some(Condition::masked(cond, &draws.keep)),
    )?;
    let resid = tape.constant(draws.eps.clone()).sub(pred)?;
    let total = match norm {
        LossNorm::SquaredL2 => resid.sq_l2()?,
        LossNorm::L1 => resid.l1()?,
    };
    total.scale(1.0 / x0.rows() as f64)
}

/// Draws `t`, `ε` and the condition mask from `rng`, then records the loss.
#[allow(clippy::too_many_arguments)]
pub fn dim_loss<'t>(
    tape: &'t Tape,
    net: &ScoreNetwork,
    x0: &Tensor,
    cond: &Tensor,
    schedule: &NoiseSchedule,
    mask_prob: f64,
    norm: LossNorm,
    rng: &mut ChaCha8Rng,
) -> Result<Var<'t>> {
    if x0.rows() == 0 {
        return Err(Error::Empty("diffusion loss needs a nonempty batch".into()));
    }
    let draws = DimDraws::sample(x0.rows(), x0.cols(), schedule, mask_prob, rng);
    dim_loss_with(tape, net, &net.params, x0, cond, schedule, &draws, norm)
}
