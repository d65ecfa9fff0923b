//! Alignment layer applied to generated embeddings, and the losses that
//! train it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_core::layers::Init;
use crate::tensor_core::{Linear, ParamStore, RngStreams, Tape, Tensor, Var};

pub const ALM_WEIGHT: &str = "alm.weight";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_task: f64,
    /// 1 or 2. `None` takes the variant's default.
    pub norm_order: Option<u8>,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_task: 0.1,
            norm_order: None,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_task >= 0.0 && self.lambda_task.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda_task must be >= 0, got {}",
                self.lambda_task
            )));
        }
        if let Some(n) = self.norm_order {
            NormOrder::from_u8(n)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormOrder {
    /// Sum of absolute coordinate errors.
    L1,
    /// Squared Euclidean distance.
    SquaredL2,
}

impl NormOrder {
    pub fn from_u8(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Self::L1),
            2 => Ok(Self::SquaredL2),
            _ => Err(Error::InvalidArgument(format!("norm_order must be 1 or 2, got {n}"))),
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Self::L1 => 1,
            Self::SquaredL2 => 2,
        }
    }
}

/// Bias-free `k × k` linear map, initialized to the identity.
#[derive(Clone, Debug)]
pub struct AlmLayer {
    pub params: ParamStore,
    linear: Linear,
}

impl AlmLayer {
    pub fn new(k: usize) -> Self {
        let mut params = ParamStore::new();
        // identity init draws nothing
        let mut rng = RngStreams::new(0).stream("alm-init");
        let linear = Linear::new(&mut params, "alm", k, k, false, Init::Identity, &mut rng);
        Self { params, linear }
    }

    pub fn from_params(params: ParamStore) -> Result<Self> {
        let w = params.get(ALM_WEIGHT)?;
        if w.shape().len() != 2 || w.rows() != w.cols() || params.len() != 1 {
            return Err(Error::Checkpoint(format!(
                "alignment layer needs one square weight, got shape {:?}",
                w.shape()
            )));
        }
        let mut layer = Self::new(w.rows());
        layer.params = params;
        Ok(layer)
    }

    pub fn k(&self) -> usize {
        self.linear.in_dim
    }

    pub fn weight(&self) -> &Tensor {
        self.params.get(ALM_WEIGHT).expect("layer always holds its weight")
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, u_hat: Var<'t>) -> Result<Var<'t>> {
        self.linear.forward(tape, store, u_hat)
    }

    /// Aligned embeddings, one row per input row.
    pub fn apply(&self, u_hat: &Tensor) -> Result<Tensor> {
        if u_hat.shape().len() != 2 || u_hat.cols() != self.k() {
            return Err(Error::Shape {
                op: "alm_forward",
                left: u_hat.shape().to_vec(),
                right: vec![self.k(), self.k()],
            });
        }
        u_hat.matmul(self.weight())
    }

    /// Predicted rating `ALM(û)·v`.
    pub fn predict_rating(&self, u_hat: &[f64], v: &[f64]) -> Result<f64> {
        if u_hat.len() != self.k() || v.len() != self.k() {
            return Err(Error::Shape {
                op: "predict_rating_cdr",
                left: vec![u_hat.len()],
                right: vec![v.len()],
            });
        }
        let aligned = self.apply(&Tensor::new(vec![1, u_hat.len()], u_hat.to_vec())?)?;
        Ok(aligned.data().iter().zip(v).map(|(a, b)| a * b).sum())
    }
}

/// Mean over rows of `||ALM(û) − u||_n^n`.
pub fn alm_loss<'t>(
    tape: &'t Tape,
    layer: &AlmLayer,
    store: &ParamStore,
    u_hat: &Tensor,
    u_true: &Tensor,
    norm: NormOrder,
) -> Result<Var<'t>> {
    if u_hat.rows() == 0 {
        return Err(Error::Empty("alignment loss needs a nonempty batch".into()));
    }
    let aligned = layer.forward(tape, store, tape.constant(u_hat.clone()))?;
    let resid = aligned.sub(tape.constant(u_true.clone()))?;
    let total = match norm {
        NormOrder::L1 => resid.l1()?,
        NormOrder::SquaredL2 => resid.sq_l2()?,
    };
    total.scale(1.0 / u_hat.rows() as f64)
}

/// Ratings used by the task loss. Record `i` belongs to row `user_rows[i]`
/// of the generated-embedding batch and has target item vector `items[i]`.
#[derive(Clone, Debug)]
pub struct TaskBatch {
    pub user_rows: Vec<usize>,
    pub items: Tensor,
    pub ratings: Vec<f64>,
}

impl TaskBatch {
    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }
}

/// Mean over records of `(r − ALM(û)·v)²`.
pub fn task_loss<'t>(
    tape: &'t Tape,
    layer: &AlmLayer,
    store: &ParamStore,
    u_hat: &Tensor,
    batch: &TaskBatch,
) -> Result<Var<'t>> {
    if batch.items.rows() != batch.len() {
        return Err(Error::Shape {
            op: "task_loss",
            left: batch.items.shape().to_vec(),
            right: vec![batch.len()],
        });
    }
    let items = tape.constant(batch.items.clone());
    task_loss_with_items(tape, layer, store, u_hat, &batch.user_rows, &batch.ratings, items)
}

/// [`task_loss`] with item vectors supplied as a tape variable (one row
/// per rating), so they can be trained too.
pub fn task_loss_with_items<'t>(
    tape: &'t Tape,
    layer: &AlmLayer,
    store: &ParamStore,
    u_hat: &Tensor,
    user_rows: &[usize],
    ratings: &[f64],
    items: Var<'t>,
) -> Result<Var<'t>> {
    if ratings.is_empty() {
        return Err(Error::Empty("task loss needs at least one rating".into()));
    }
    if user_rows.len() != ratings.len() {
        return Err(Error::Shape {
            op: "task_loss",
            left: vec![user_rows.len()],
            right: vec![ratings.len()],
        });
    }
    let aligned = layer.forward(tape, store, tape.constant(u_hat.clone()))?;
    let pred = aligned.gather_rows(user_rows)?.row_dot(items)?;
    let ratings = Tensor::new(vec![ratings.len(), 1], ratings.to_vec())?;
    tape.constant(ratings)
        .sub(pred)?
        .sq_l2()?
        .scale(1.0 / user_rows.len() as f64)
}

/// `alm + λ·task`.
pub fn combined_loss(alm: f64, task: f64, weights: &LossWeights) -> f64 {
    alm + weights.lambda_task * task
}
