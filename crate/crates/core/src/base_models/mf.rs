//! Dot-product matrix factorization trained on squared rating error.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Interaction;
use crate::error::{Error, Result};
use crate::tensor_core::rng::normal;
use crate::tensor_core::{AdamConfig, ParamStore, RngStreams, Tape, Tensor, Var};

pub const USERS: &str = "users";
pub const ITEMS: &str = "items";

/// Pretrained user and item vectors of one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub users: Tensor,
    pub items: Tensor,
}

impl EmbeddingTable {
    pub fn k(&self) -> usize {
        self.users.cols()
    }

    pub fn num_users(&self) -> usize {
        self.users.rows()
    }

    pub fn num_items(&self) -> usize {
        self.items.rows()
    }

    pub fn user(&self, i: usize) -> &[f64] {
        self.users.row(i)
    }

    pub fn item(&self, j: usize) -> &[f64] {
        self.items.row(j)
    }

    pub fn predict(&self, user: usize, item: usize) -> f64 {
        dot(self.user(user), self.item(item))
    }

    pub fn to_store(&self) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(USERS, self.users.clone());
        s.insert(ITEMS, self.items.clone());
        s
    }

    pub fn from_store(store: &ParamStore) -> Result<Self> {
        Ok(Self {
            users: store.get(USERS)?.clone(),
            items: store.get(ITEMS)?.clone(),
        })
    }

    pub fn checksum(&self) -> String {
        self.to_store().checksum()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Rating score `u·v`. Predictions are unclipped here; clipping to the
/// rating scale happens only when error metrics are computed.
pub fn predict_rating(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape {
            op: "predict_rating",
            left: vec![u.len()],
            right: vec![v.len()],
        });
    }
    Ok(dot(u, v))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MfConfig {
    pub k: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub init_std: f64,
    /// Set by the caller; not part of serialized configs.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for MfConfig {
    fn default() -> Self {
        Self {
            k: 10,
            epochs: 200,
            lr: 1e-3,
            batch_size: 512,
            init_std: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct MfLog {
    /// Mean batch MSE of each epoch.
    pub epoch_mse: Vec<f64>,
}

/// The table a run of [`train_mf`] starts from.
pub fn init_table(num_users: usize, num_items: usize, cfg: &MfConfig, stream: &str) -> EmbeddingTable {
    let mut rng = RngStreams::new(cfg.seed).stream(stream);
    EmbeddingTable {
        users: normal(&mut rng, &[num_users, cfg.k], cfg.init_std),
        items: normal(&mut rng, &[num_items, cfg.k], cfg.init_std),
    }
}

/// `(1/|B|) Σ (r − u·v)²` over a batch, recorded on `tape`.
pub fn mf_batch_loss<'t>(tape: &'t Tape, store: &ParamStore, batch: &[Interaction]) -> Result<Var<'t>> {
    let users: Vec<usize> = batch.iter().map(|x| x.user).collect();
    let items: Vec<usize> = batch.iter().map(|x| x.item).collect();
    let ratings = Tensor::new(vec![batch.len(), 1], batch.iter().map(|x| x.rating).collect())?;
    let u = tape.param(store, USERS)?.gather_rows(&users)?;
    let v = tape.param(store, ITEMS)?.gather_rows(&items)?;
    let pred = u.row_dot(v)?;
    let resid = tape.constant(ratings).sub(pred)?;
    resid.sq_l2()?.scale(1.0 / batch.len() as f64)
}

pub fn train_mf(
    interactions: &[Interaction],
    num_users: usize,
    num_items: usize,
    cfg: &MfConfig,
) -> Result<(EmbeddingTable, MfLog)> {
    train_mf_from(init_table(num_users, num_items, cfg, "mf-init"), interactions, cfg)
}

/// Continues training from an existing table.
pub fn train_mf_from(
    init: EmbeddingTable,
    interactions: &[Interaction],
    cfg: &MfConfig,
) -> Result<(EmbeddingTable, MfLog)> {
    if interactions.is_empty() {
        return Err(Error::Empty("matrix factorization needs at least one rating".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    if let Some(x) = interactions
        .iter()
        .find(|x| x.user >= init.num_users() || x.item >= init.num_items())
    {
        return Err(Error::InvalidArgument(format!(
            "interaction ({}, {}) outside a {}x{} table",
            x.user,
            x.item,
            init.num_users(),
            init.num_items()
        )));
    }
    let mut store = init.to_store();
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut rng = RngStreams::new(cfg.seed).stream("mf-shuffle");
    let mut order: Vec<usize> = (0..interactions.len()).collect();
    let mut log = MfLog::default();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| interactions[i]));
            let tape = Tape::new();
            let loss = mf_batch_loss(&tape, &store, &batch)?;
            total += loss.value().item()? * batch.len() as f64;
            tape.backward_into(loss, &mut store)?;
            store.adam_step(&adam)?;
        }
        let mse = total / interactions.len() as f64;
        log::debug!("mf epoch {epoch}: mse {mse:.5}");
        log.epoch_mse.push(mse);
    }
    Ok((EmbeddingTable::from_store(&store)?, log))
}

/// Mean squared error of a table on a set of interactions.
pub fn mse(table: &EmbeddingTable, interactions: &[Interaction]) -> f64 {
    let total: f64 = interactions
        .iter()
        .map(|x| (x.rating - table.predict(x.user, x.item)).powi(2))
        .sum();
    total / interactions.len().max(1) as f64
}
