//! Rating-error and ranking metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::Interaction;
use crate::data::records::{MAX_RATING, MIN_RATING};
use crate::error::{Error, Result};
use crate::tensor_core::checkpoint::write_atomic;
use crate::tensor_core::{RngStreams, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum CandidateMode {
    AllItems,
    /// The true item plus `n_neg` negatives drawn per user from `seed`.
    Sampled { n_neg: usize, seed: u64 },
}

impl Default for CandidateMode {
    fn default() -> Self {
        Self::AllItems
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub k: usize,
    pub candidates: CandidateMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: 20,
            candidates: CandidateMode::AllItems,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub mae: f64,
    pub rmse: f64,
    pub k: usize,
    pub ndcg_at_k: f64,
    pub hit_at_k: f64,
    pub n_eval_records: usize,
    pub n_eval_users: usize,
    /// Users dropped because the model had no vector for them.
    pub n_skipped_users: usize,
    pub config: EvalConfig,
}

/// MAE and RMSE with predictions clipped to the rating scale.
pub fn mae_rmse(preds: &[f64], truths: &[f64]) -> Result<(f64, f64)> {
    if preds.len() != truths.len() {
        return Err(Error::Shape {
            op: "mae_rmse",
            left: vec![preds.len()],
            right: vec![truths.len()],
        });
    }
    if preds.is_empty() {
        return Err(Error::Empty("no predictions to score".into()));
    }
    let n = preds.len() as f64;
    let (mut abs, mut sq) = (0.0, 0.0);
    for (&p, &r) in preds.iter().zip(truths) {
        let d = p.clamp(MIN_RATING, MAX_RATING) - r;
        abs += d.abs();
        sq += d * d;
    }
    Ok((abs / n, (sq / n).sqrt()))
}

/// 1-based rank of `true_item` among `candidates` by descending score;
/// equal scores are ordered by ascending item index.
pub fn rank_of(scores: &[f64], candidates: &[usize], true_item: usize) -> Result<usize> {
    if scores.len() != candidates.len() {
        return Err(Error::Shape {
            op: "rank_of",
            left: vec![scores.len()],
            right: vec![candidates.len()],
        });
    }
    let pos = candidates
        .iter()
        .position(|&c| c == true_item)
        .ok_or_else(|| Error::InvalidArgument(format!("true item {true_item} is not among the candidates")))?;
    let s = scores[pos];
    if scores.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite {
            op: "rank_of".into(),
        });
    }
    let ahead = scores
        .iter()
        .zip(candidates)
        .filter(|&(&v, &c)| v > s || (v == s && c < true_item))
        .count();
    Ok(ahead + 1)
}

/// `(ndcg, hit)` contribution of one rank.
pub fn rank_contribution(rank: usize, k: usize) -> (f64, f64) {
    if rank <= k {
        (1.0 / ((1 + rank) as f64).log2(), 1.0)
    } else {
        (0.0, 0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankSummary {
    pub ndcg: f64,
    pub hit: f64,
    /// One rank per evaluated record, in input order.
    pub ranks: Vec<usize>,
}

/// Candidate items for `user` under `mode`. In sampled mode the negatives
/// depend only on the seed, the user and the user's positives, so every
/// model sees the same set.
pub fn candidates_for(mode: &CandidateMode, user: usize, positives: &BTreeSet<usize>, n_items: usize) -> Vec<usize> {
    match *mode {
        CandidateMode::AllItems => (0..n_items).collect(),
        CandidateMode::Sampled { n_neg, seed } => {
            let pool: Vec<usize> = (0..n_items).filter(|i| !positives.contains(i)).collect();
            let mut rng = RngStreams::new(seed).indexed("negatives", user as u64);
            let take = n_neg.min(pool.len());
            let mut negs: Vec<usize> = index::sample(&mut rng, pool.len(), take).iter().map(|i| pool[i]).collect();
            negs.sort_unstable();
            negs
        }
    }
}

/// Ranks the true item of every record. `score` maps `(user, candidates)`
/// to one score per candidate.
pub fn rank_metrics(
    score: &dyn Fn(usize, &[usize]) -> Result<Vec<f64>>,
    records: &[Interaction],
    n_items: usize,
    k: usize,
    mode: &CandidateMode,
) -> Result<RankSummary> {
    if records.is_empty() {
        return Err(Error::Empty("no records to rank".into()));
    }
    let mut by_user: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_user.entry(r.user).or_default().push(i);
    }
    let mut ranks = vec![0; records.len()];
    for (&user, idx) in &by_user {
        let positives: BTreeSet<usize> = idx.iter().map(|&i| records[i].item).collect();
        let base = candidates_for(mode, user, &positives, n_items);
        match mode {
            CandidateMode::AllItems => {
                let scores = score(user, &base)?;
                for &i in idx {
                    ranks[i] = rank_of(&scores, &base, records[i].item)?;
                }
            }
            CandidateMode::Sampled { .. } => {
                for &i in idx {
                    let mut cands = base.clone();
                    cands.push(records[i].item);
                    let scores = score(user, &cands)?;
                    ranks[i] = rank_of(&scores, &cands, records[i].item)?;
                }
            }
        }
    }
    let n = records.len() as f64;
    let (mut ndcg, mut hit) = (0.0, 0.0);
    for &r in &ranks {
        let (d, h) = rank_contribution(r, k);
        ndcg += d;
        hit += h;
    }
    Ok(RankSummary {
        ndcg: ndcg / n,
        hit: hit / n,
        ranks,
    })
}

/// Full evaluation of a model given by one target-space vector per user
/// (`None` skips the user) and the target item table.
pub fn evaluate_vectors(
    model: &str,
    user_vector: &dyn Fn(usize) -> Option<Vec<f64>>,
    items: &Tensor,
    records: &[Interaction],
    cfg: &EvalConfig,
) -> Result<(MetricsReport, RankSummary)> {
    if records.is_empty() {
        return Err(Error::Empty("no evaluation records".into()));
    }
    let mut vectors: BTreeMap<usize, Option<Vec<f64>>> = BTreeMap::new();
    for r in records {
        vectors.entry(r.user).or_insert_with(|| user_vector(r.user));
    }
    let kept: Vec<Interaction> = records
        .iter()
        .copied()
        .filter(|r| vectors[&r.user].is_some())
        .collect();
    let n_skipped = vectors.values().filter(|v| v.is_none()).count();
    if kept.is_empty() {
        return Err(Error::Empty(format!("model {model} covers none of the evaluation users")));
    }
    let dot = |u: &[f64], item: usize| -> f64 { u.iter().zip(items.row(item)).map(|(a, b)| a * b).sum() };
    let preds: Vec<f64> = kept
        .iter()
        .map(|r| dot(vectors[&r.user].as_deref().expect("kept"), r.item))
        .collect();
    let truths: Vec<f64> = kept.iter().map(|r| r.rating).collect();
    let (mae, rmse) = mae_rmse(&preds, &truths)?;
    let score = |user: usize, cands: &[usize]| -> Result<Vec<f64>> {
        let u = vectors[&user].as_deref().expect("kept");
        Ok(cands.iter().map(|&c| dot(u, c)).collect())
    };
    let ranks = rank_metrics(&score, &kept, items.rows(), cfg.k, &cfg.candidates)?;
    let report = MetricsReport {
        model: model.to_string(),
        mae,
        rmse,
        k: cfg.k,
        ndcg_at_k: ranks.ndcg,
        hit_at_k: ranks.hit,
        n_eval_records: kept.len(),
        n_eval_users: vectors.len() - n_skipped,
        n_skipped_users: n_skipped,
        config: *cfg,
    };
    Ok((report, ranks))
}

/// Writes `user_id,item_id,rank` rows for debugging.
pub fn write_ranks_csv(path: &Path, rows: &[(String, String, usize)]) -> Result<()> {
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["user_id", "item_id", "rank"]).map_err(io)?;
    for (u, i, r) in rows {
        w.write_record([u.as_str(), i.as_str(), &r.to_string()]).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}
