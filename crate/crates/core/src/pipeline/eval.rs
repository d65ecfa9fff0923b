//! Cold- and warm-start evaluation of the transfer model and the
//! baselines, all through one scoring path.

use std::collections::BTreeSet;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::plan::ExperimentPlan;
use super::train::{Pretrained, TrainedDiffCDR};
use crate::alignment::{task_loss_with_items, AlmLayer, ALM_WEIGHT};
use crate::base_models::{train_cmf, train_emcdr, MappingConfig};
use crate::data::{ColdSplit, DomainPair, Interaction, RatingRecord};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_vectors, EvalConfig, MetricsReport, RankSummary};
use crate::tensor_core::{AdamConfig, ParamStore, RngStreams, Tape, Tensor};

const ITEMS: &str = "items";

/// Target-domain interactions of `records`, skipping unknown users/items.
pub fn target_interactions(pair: &DomainPair, records: &[RatingRecord]) -> Vec<Interaction> {
    records
        .iter()
        .filter(|r| pair.target.users.contains(&r.user_id) && pair.target.items.contains(&r.item_id))
        .map(|r| pair.target.index(r))
        .collect()
}

/// Scores `records` with per-user target-space vectors keyed by target
/// user index.
fn evaluate_with(
    name: &str,
    pair: &DomainPair,
    records: &[RatingRecord],
    vectors: &dyn Fn(&[&str]) -> Result<Vec<Option<Vec<f64>>>>,
    items: &Tensor,
    cfg: &EvalConfig,
) -> Result<(MetricsReport, RankSummary)> {
    let inter = target_interactions(pair, records);
    if inter.is_empty() {
        return Err(Error::Empty("no evaluation records".into()));
    }
    let users: Vec<usize> = inter.iter().map(|x| x.user).collect::<BTreeSet<_>>().into_iter().collect();
    let ids: Vec<&str> = users
        .iter()
        .map(|&u| pair.target.users.id_of(u).expect("indexed user"))
        .collect();
    let vecs = vectors(&ids)?;
    let lookup = |u: usize| -> Option<Vec<f64>> {
        users.binary_search(&u).ok().and_then(|i| vecs[i].clone())
    };
    let (report, ranks) = evaluate_vectors(name, &lookup, items, &inter, cfg)?;
    if report.n_skipped_users > 0 {
        log::warn!("{name}: skipped {} users without a source embedding", report.n_skipped_users);
    }
    Ok((report, ranks))
}

/// Evaluates the transfer model on arbitrary target records.
pub fn evaluate_records(
    model: &TrainedDiffCDR,
    pair: &DomainPair,
    records: &[RatingRecord],
    cfg: &EvalConfig,
) -> Result<(MetricsReport, RankSummary)> {
    let name = format!("DiffCDR-{:?}", model.plan.variant);
    evaluate_with(&name, pair, records, &|ids| model.user_vectors(ids), &model.target.items, cfg)
}

/// Cold-start evaluation on every target record of the test users.
pub fn evaluate_cold(
    model: &TrainedDiffCDR,
    pair: &DomainPair,
    split: &ColdSplit,
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    let records: Vec<RatingRecord> = split.test_target_records(pair).into_iter().cloned().collect();
    Ok(evaluate_records(model, pair, &records, cfg)?.0)
}

/// Continues training the alignment layer and the target item vectors on
/// the task loss over `finetune` records. The score network is untouched.
pub fn warm_start_finetune(
    model: &TrainedDiffCDR,
    pair: &DomainPair,
    finetune: &[RatingRecord],
) -> Result<TrainedDiffCDR> {
    let cfg = &model.plan.warm;
    let inter = target_interactions(pair, finetune);
    let users: Vec<usize> = inter.iter().map(|x| x.user).collect::<BTreeSet<_>>().into_iter().collect();
    let ids: Vec<&str> = users
        .iter()
        .map(|&u| pair.target.users.id_of(u).expect("indexed user"))
        .collect();
    let src_rows: Vec<Option<usize>> = ids.iter().map(|u| model.source_users.index_of(u)).collect();
    let usable: Vec<(usize, usize)> = users
        .iter()
        .zip(&src_rows)
        .filter_map(|(&u, s)| s.map(|s| (u, s)))
        .collect();
    let records: Vec<(usize, usize, f64)> = inter
        .iter()
        .filter_map(|x| usable.iter().position(|p| p.0 == x.user).map(|row| (row, x.item, x.rating)))
        .collect();
    if records.is_empty() || cfg.epochs == 0 {
        if records.is_empty() {
            log::warn!("warm start: no usable fine-tune records; model unchanged");
        }
        return Ok(model.clone());
    }

    // generated embeddings stay fixed: the score network is frozen
    let source_rows = model.source.users.gather_rows(&usable.iter().map(|p| p.1).collect::<Vec<_>>())?;
    let u_hat = model.generate(&source_rows)?;

    let mut store = ParamStore::new();
    store.insert(ALM_WEIGHT, model.alm.weight().clone());
    store.insert(ITEMS, model.target.items.clone());
    let adam = AdamConfig::with_lr(cfg.lr);
    let layer = AlmLayer::new(model.alm.k());
    let mut rng = RngStreams::new(model.plan.seed).stream("warm-shuffle");
    let mut order: Vec<usize> = (0..records.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let user_rows: Vec<usize> = chunk.iter().map(|&i| records[i].0).collect();
            let item_idx: Vec<usize> = chunk.iter().map(|&i| records[i].1).collect();
            let ratings: Vec<f64> = chunk.iter().map(|&i| records[i].2).collect();
            let tape = Tape::new();
            let items = tape.param(&store, ITEMS)?.gather_rows(&item_idx)?;
            let loss = task_loss_with_items(&tape, &layer, &store, &u_hat, &user_rows, &ratings, items)?;
            tape.backward_into(loss, &mut store)?;
            store.adam_step(&adam)?;
        }
    }
    let mut out = model.clone();
    let mut alm_params = ParamStore::new();
    alm_params.insert(ALM_WEIGHT, store.get(ALM_WEIGHT)?.clone());
    out.alm = AlmLayer::from_params(alm_params)?;
    out.target.items = store.get(ITEMS)?.clone();
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Baseline {
    TGT,
    CMF,
    EMCDR,
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "TGT" => Ok(Self::TGT),
            "CMF" => Ok(Self::CMF),
            "EMCDR" => Ok(Self::EMCDR),
            _ => Err(Error::InvalidArgument(format!("unknown baseline `{s}` (expected TGT, CMF or EMCDR)"))),
        }
    }
}

/// Trains (where needed) and evaluates a baseline on the cold-start test
/// records, with the same candidate sets as the transfer model.
pub fn run_baseline(
    which: Baseline,
    pair: &DomainPair,
    split: &ColdSplit,
    pre: &Pretrained,
    plan: &ExperimentPlan,
) -> Result<MetricsReport> {
    let records: Vec<RatingRecord> = split.test_target_records(pair).into_iter().cloned().collect();
    let cfg = &plan.eval;
    let name = format!("{which:?}");
    let report = match which {
        Baseline::TGT => {
            let vectors = |ids: &[&str]| -> Result<Vec<Option<Vec<f64>>>> {
                Ok(ids
                    .iter()
                    .map(|u| pair.target.users.index_of(u).map(|i| pre.target.user(i).to_vec()))
                    .collect())
            };
            evaluate_with(&name, pair, &records, &vectors, &pre.target.items, cfg)?.0
        }
        Baseline::CMF => {
            let (cmf, _) = train_cmf(pair, split, &plan.mf_config("cmf"))?;
            let items = cmf.target_items()?;
            let vectors = |ids: &[&str]| -> Result<Vec<Option<Vec<f64>>>> {
                Ok(ids.iter().map(|u| cmf.user_vector(u).map(<[f64]>::to_vec)).collect())
            };
            evaluate_with(&name, pair, &records, &vectors, &items, cfg)?.0
        }
        Baseline::EMCDR => {
            let pairs: Vec<(usize, usize)> = split
                .train_users
                .iter()
                .filter_map(|u| Some((pair.source.users.index_of(u)?, pair.target.users.index_of(u)?)))
                .collect();
            let mcfg = MappingConfig {
                seed: RngStreams::new(plan.seed).derive_seed("emcdr"),
                ..plan.emcdr.clone()
            };
            let net = train_emcdr(&pre.source, &pre.target, &pairs, &mcfg)?;
            let vectors = |ids: &[&str]| -> Result<Vec<Option<Vec<f64>>>> {
                let known: Vec<(usize, usize)> = ids
                    .iter()
                    .enumerate()
                    .filter_map(|(i, u)| pair.source.users.index_of(u).map(|s| (i, s)))
                    .collect();
                let mut out = vec![None; ids.len()];
                if known.is_empty() {
                    return Ok(out);
                }
                let rows = pre.source.users.gather_rows(&known.iter().map(|p| p.1).collect::<Vec<_>>())?;
                let mapped = net.map(&rows)?;
                for (j, &(i, _)) in known.iter().enumerate() {
                    out[i] = Some(mapped.row(j).to_vec());
                }
                Ok(out)
            };
            evaluate_with(&name, pair, &records, &vectors, &pre.target.items, cfg)?.0
        }
    };
    Ok(report)
}
