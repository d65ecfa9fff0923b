//! Reverse-process samplers: first-order DPM-Solver over the diffusion ODE
//! and discrete ancestral sampling (kept as a reference implementation).

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{guided_score, NoiseSchedule, ScoreNetwork};
use crate::error::{Error, Result};
use crate::tensor_core::rng::standard_normal;
use crate::tensor_core::Tensor;

/// Anything that predicts the noise in `x` at time `t`.
pub trait NoisePredictor {
    fn predict_noise(&self, x: &Tensor, t: f64) -> Result<Tensor>;
}

/// The score network, guided when a condition is given.
#[derive(Clone, Copy, Debug)]
pub struct NetPredictor<'a> {
    pub net: &'a ScoreNetwork,
    pub cond: Option<&'a Tensor>,
    pub s: f64,
}

impl NoisePredictor for NetPredictor<'_> {
    fn predict_noise(&self, x: &Tensor, t: f64) -> Result<Tensor> {
        let ts = vec![t; x.rows()];
        match self.cond {
            Some(c) => guided_score(self.net, x, &ts, c, self.s),
            None => self.net.predict(x, &ts, None),
        }
    }
}

/// Exact noise predictor for data distributed as `N(mean, I)`:
/// `E[ε | x_t] = σ(t)·(x_t − ᾱ(t)·mean)`.
#[derive(Clone, Debug)]
pub struct GaussianOracle {
    pub schedule: NoiseSchedule,
    pub mean: Vec<f64>,
}

impl NoisePredictor for GaussianOracle {
    fn predict_noise(&self, x: &Tensor, t: f64) -> Result<Tensor> {
        if x.cols() != self.mean.len() {
            return Err(Error::Shape {
                op: "gaussian oracle",
                left: x.shape().to_vec(),
                right: vec![self.mean.len()],
            });
        }
        let (a, s) = (self.schedule.alpha(t), self.schedule.sigma(t));
        let k = self.mean.len();
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| s * (v - a * self.mean[i % k]))
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }
}

/// Predicts zero noise everywhere.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroPredictor;

impl NoisePredictor for ZeroPredictor {
    fn predict_noise(&self, x: &Tensor, _t: f64) -> Result<Tensor> {
        Ok(Tensor::zeros(x.shape()))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Gaussian,
    /// Start from the raw source-domain embedding, without rescaling.
    #[default]
    SourceEmbedding,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub nfe: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub init_mode: InitMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            nfe: 30,
            t_start: 1.0,
            t_end: 1e-3,
            init_mode: InitMode::SourceEmbedding,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nfe == 0 {
            return Err(Error::InvalidArgument("nfe must be at least 1".into()));
        }
        if !(0.0 < self.t_end && self.t_end < self.t_start && self.t_start <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < t_end < t_start <= 1, got t_end={} t_start={}",
                self.t_end, self.t_start
            )));
        }
        Ok(())
    }

    /// Starting state for `source` under the configured init mode.
    pub fn initial_state(&self, source: &Tensor, rng: &mut ChaCha8Rng) -> Tensor {
        match self.init_mode {
            InitMode::SourceEmbedding => source.clone(),
            InitMode::Gaussian => standard_normal(rng, source.shape()),
        }
    }
}

/// Agreement required between bisection and the closed-form inverse.
const GRID_CROSS_CHECK: f64 = 1e-8;

/// Solves `λ(t) = target` for `t ∈ [lo, hi]` by bisection, down to
/// adjacent floating-point values.
fn invert_lambda(schedule: &NoiseSchedule, target: f64, mut lo: f64, mut hi: f64) -> Result<f64> {
    if !(schedule.lambda(hi) <= target && target <= schedule.lambda(lo)) {
        return Err(Error::GridInversion(target));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        // λ decreases in t
        if schedule.lambda(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 {
            break;
        }
    }
    let t = 0.5 * (lo + hi);
    let closed = schedule.inverse_lambda(target);
    if !t.is_finite() || (t - closed).abs() > GRID_CROSS_CHECK {
        return Err(Error::GridInversion(target));
    }
    Ok(t)
}

/// Time grid `t_0 = t_start > ... > t_M = t_end` with `M = nfe` and
/// uniformly spaced `λ(t_i)`.
pub fn build_time_grid(cfg: &SolverConfig, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    cfg.validate()?;
    let m = cfg.nfe;
    let (l0, l1) = (schedule.lambda(cfg.t_start), schedule.lambda(cfg.t_end));
    let mut grid = Vec::with_capacity(m + 1);
    grid.push(cfg.t_start);
    for i in 1..m {
        let target = l0 + (l1 - l0) * i as f64 / m as f64;
        grid.push(invert_lambda(schedule, target, cfg.t_end, cfg.t_start)?);
    }
    grid.push(cfg.t_end);
    Ok(grid)
}

/// States visited by the solver: `states[i]` is the state at `grid[i]`,
/// and `x0` is the final denoised output.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub grid: Vec<f64>,
    pub states: Vec<Tensor>,
    pub x0: Tensor,
}

fn ensure_state(x: Tensor, step: usize) -> Result<Tensor> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::SamplerDiverged { step })
    }
}

/// First-order DPM-Solver from `x_init` at `t_start` down to `t_end`,
/// followed by a final `x̂₀ = (x − σ ε̂)/ᾱ` correction at `t_end`.
pub fn dpm_solver1_trajectory(
    predictor: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    cfg: &SolverConfig,
    x_init: &Tensor,
) -> Result<Trajectory> {
    let grid = build_time_grid(cfg, schedule)?;
    let mut states = Vec::with_capacity(grid.len());
    let mut x = ensure_state(x_init.clone(), 0)?;
    for i in 1..grid.len() {
        let (s, t) = (grid[i - 1], grid[i]);
        let eps = predictor.predict_noise(&x, s)?;
        let ratio = schedule.alpha(t) / schedule.alpha(s);
        let h = schedule.lambda(t) - schedule.lambda(s);
        let coef = schedule.sigma(t) * h.exp_m1();
        let next: Vec<f64> = x
            .data()
            .iter()
            .zip(eps.data())
            .map(|(&xv, &e)| ratio * xv - coef * e)
            .collect();
        let next = ensure_state(Tensor::new(x.shape().to_vec(), next)?, i)?;
        states.push(std::mem::replace(&mut x, next));
    }
    let t_end = cfg.t_end;
    let eps = predictor.predict_noise(&x, t_end)?;
    let (a, s) = (schedule.alpha(t_end), schedule.sigma(t_end));
    let x0: Vec<f64> = x.data().iter().zip(eps.data()).map(|(&xv, &e)| (xv - s * e) / a).collect();
    let x0 = ensure_state(Tensor::new(x.shape().to_vec(), x0)?, grid.len())?;
    states.push(x);
    Ok(Trajectory { grid, states, x0 })
}

pub fn dpm_solver1(
    predictor: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    cfg: &SolverConfig,
    x_init: &Tensor,
) -> Result<Tensor> {
    Ok(dpm_solver1_trajectory(predictor, schedule, cfg, x_init)?.x0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AncestralConfig {
    pub num_steps: usize,
}

impl Default for AncestralConfig {
    fn default() -> Self {
        Self { num_steps: 1000 }
    }
}

/// Discrete ancestral sampling on the grid `t_i = i/N`, starting from
/// `N(0, I)` at `t = 1`. Step `i` uses `α_i = (ᾱ(t_i)/ᾱ(t_{i−1}))²` and
/// variance `1 − α_i`; no noise is added on the last step.
pub fn ddpm_ancestral(
    predictor: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    cfg: &AncestralConfig,
    shape: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    let x = standard_normal(rng, shape);
    ddpm_ancestral_from(predictor, schedule, cfg, x, rng)
}

/// [`ddpm_ancestral`] from a given state at `t = 1`.
pub fn ddpm_ancestral_from(
    predictor: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    cfg: &AncestralConfig,
    mut x: Tensor,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    let n = cfg.num_steps;
    if n == 0 {
        return Err(Error::InvalidArgument("num_steps must be at least 1".into()));
    }
    for i in (1..=n).rev() {
        let t = i as f64 / n as f64;
        let t_prev = (i - 1) as f64 / n as f64;
        let alpha_i = (schedule.alpha(t) / schedule.alpha(t_prev)).powi(2);
        let eps = predictor.predict_noise(&x, t)?;
        let coef = (1.0 - alpha_i) / schedule.sigma(t);
        let inv_sqrt = 1.0 / alpha_i.sqrt();
        let mut next: Vec<f64> = x
            .data()
            .iter()
            .zip(eps.data())
            .map(|(&xv, &e)| inv_sqrt * (xv - coef * e))
            .collect();
        if i > 1 {
            let z = standard_normal(rng, x.shape());
            let std = (1.0 - alpha_i).sqrt();
            for (v, zv) in next.iter_mut().zip(z.data()) {
                *v += std * zv;
            }
        }
        x = ensure_state(Tensor::new(x.shape().to_vec(), next)?, n + 1 - i)?;
    }
    Ok(x)
}
