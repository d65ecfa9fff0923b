//! Single-domain (TGT), shared-user (CMF) and mapping-network (EMCDR)
//! baselines.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::mf::{train_mf, EmbeddingTable, MfConfig, MfLog};
use crate::data::{ColdSplit, DomainPair, IdMap, Interaction};
use crate::error::{Error, Result};
use crate::tensor_core::layers::Init;
use crate::tensor_core::{AdamConfig, Linear, ParamStore, RngStreams, Tape, Tensor, Var};

/// Target-only MF over the training users' target records. Test users keep
/// their initial vectors since no rating of theirs is seen.
pub fn train_tgt(pair: &DomainPair, split: &ColdSplit, cfg: &MfConfig) -> Result<(EmbeddingTable, MfLog)> {
    let train = pair.target.interactions_where(|r| !split.is_test(&r.user_id));
    train_mf(&train, pair.target.users.len(), pair.target.items.len(), cfg)
}

/// CMF: one user table over the union of both domains' users and a joint
/// item table `[source items; target items]`.
#[derive(Clone, Debug)]
pub struct CmfModel {
    pub users: IdMap,
    pub table: EmbeddingTable,
    pub n_source_items: usize,
}

impl CmfModel {
    pub fn user_vector(&self, user_id: &str) -> Option<&[f64]> {
        self.users.index_of(user_id).map(|i| self.table.user(i))
    }

    /// Item vectors of the target catalog, in target-domain index order.
    pub fn target_items(&self) -> Result<Tensor> {
        let idx: Vec<usize> = (self.n_source_items..self.table.num_items()).collect();
        self.table.items.gather_rows(&idx)
    }
}

/// Interactions CMF trains on: every source record plus the target records
/// of non-test users, in the joint index space.
pub fn cmf_interactions(pair: &DomainPair, split: &ColdSplit, users: &IdMap) -> Vec<Interaction> {
    let n_src = pair.source.items.len();
    let mut out = Vec::with_capacity(pair.source.records.len() + pair.target.records.len());
    for r in &pair.source.records {
        out.push(Interaction {
            user: users.index_of(&r.user_id).expect("union covers source users"),
            item: pair.source.items.index_of(&r.item_id).expect("mapped"),
            rating: r.rating,
            timestamp: r.timestamp,
        });
    }
    for r in pair.target.records.iter().filter(|r| !split.is_test(&r.user_id)) {
        out.push(Interaction {
            user: users.index_of(&r.user_id).expect("union covers target users"),
            item: n_src + pair.target.items.index_of(&r.item_id).expect("mapped"),
            rating: r.rating,
            timestamp: r.timestamp,
        });
    }
    out
}

pub fn train_cmf(pair: &DomainPair, split: &ColdSplit, cfg: &MfConfig) -> Result<(CmfModel, MfLog)> {
    if pair.overlap.is_empty() {
        return Err(Error::NoOverlap);
    }
    let users = IdMap::from_ids(
        pair.source
            .users
            .ids()
            .iter()
            .chain(pair.target.users.ids())
            .map(String::as_str),
    );
    let interactions = cmf_interactions(pair, split, &users);
    let n_items = pair.source.items.len() + pair.target.items.len();
    let (table, log) = train_mf(&interactions, users.len(), n_items, cfg)?;
    Ok((
        CmfModel {
            users,
            table,
            n_source_items: pair.source.items.len(),
        },
        log,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MappingConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Set by the caller; not part of serialized configs.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 1e-3,
            batch_size: 64,
            seed: 0,
        }
    }
}

/// EMCDR's mapping function: `k → 2k → k` perceptron with SiLU.
#[derive(Clone, Debug)]
pub struct MappingNet {
    pub params: ParamStore,
    hidden: Linear,
    out: Linear,
}

impl MappingNet {
    pub fn new(k: usize, seed: u64) -> Self {
        let mut rng = RngStreams::new(seed).stream("emcdr-init");
        let mut params = ParamStore::new();
        let hidden = Linear::new(&mut params, "map.hidden", k, 2 * k, true, Init::Uniform, &mut rng);
        let out = Linear::new(&mut params, "map.out", 2 * k, k, true, Init::Uniform, &mut rng);
        Self { params, hidden, out }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<Var<'t>> {
        let h = self.hidden.forward(tape, store, x)?.silu()?;
        self.out.forward(tape, store, h)
    }

    pub fn map(&self, source: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let x = tape.constant(source.clone());
        Ok(self.forward(&tape, &self.params, x)?.value().as_ref().clone())
    }

    /// Mean over users of `||f(u_s) − u_t||²`.
    pub fn loss<'t>(&self, tape: &'t Tape, store: &ParamStore, source: &Tensor, target: &Tensor) -> Result<Var<'t>> {
        let pred = self.forward(tape, store, tape.constant(source.clone()))?;
        let resid = pred.sub(tape.constant(target.clone()))?;
        resid.sq_l2()?.scale(1.0 / source.rows() as f64)
    }
}

/// Fits the mapping on `(source_row, target_row)` pairs of training users.
/// Both tables are read-only.
pub fn train_emcdr(
    source: &EmbeddingTable,
    target: &EmbeddingTable,
    pairs: &[(usize, usize)],
    cfg: &MappingConfig,
) -> Result<MappingNet> {
    if pairs.is_empty() {
        return Err(Error::Empty("EMCDR needs at least one training user".into()));
    }
    let mut net = MappingNet::new(source.k(), cfg.seed);
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut rng = RngStreams::new(cfg.seed).stream("emcdr-shuffle");
    let mut order = pairs.to_vec();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let src = source.users.gather_rows(&chunk.iter().map(|p| p.0).collect::<Vec<_>>())?;
            let tgt = target.users.gather_rows(&chunk.iter().map(|p| p.1).collect::<Vec<_>>())?;
            let tape = Tape::new();
            let loss = net.loss(&tape, &net.params, &src, &tgt)?;
            let mut params = std::mem::take(&mut net.params);
            tape.backward_into(loss, &mut params)?;
            params.adam_step(&adam)?;
            net.params = params;
        }
    }
    Ok(net)
}
