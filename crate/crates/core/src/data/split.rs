use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::domain::DomainPair;
use super::records::RatingRecord;
use crate::error::{Error, Result};
use crate::tensor_core::RngStreams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    /// Fraction of overlapping users held out as cold-start test users.
    pub beta: f64,
    pub seed: u64,
    #[serde(default = "default_warm_fraction")]
    pub warm_fraction: f64,
}

fn default_warm_fraction() -> f64 {
    0.5
}

impl SplitSpec {
    pub fn new(beta: f64, seed: u64) -> Self {
        Self {
            beta,
            seed,
            warm_fraction: default_warm_fraction(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::InvalidArgument(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        if !(0.0..1.0).contains(&self.warm_fraction) {
            return Err(Error::InvalidArgument(format!(
                "warm_fraction must lie in [0, 1), got {}",
                self.warm_fraction
            )));
        }
        Ok(())
    }
}

/// Partition of the overlapping users. Serialized as the split manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColdSplit {
    pub beta: f64,
    pub seed: u64,
    pub train_users: Vec<String>,
    pub test_users: Vec<String>,
}

impl ColdSplit {
    pub fn is_test(&self, user_id: &str) -> bool {
        self.test_users.binary_search_by(|u| u.as_str().cmp(user_id)).is_ok()
    }

    /// Target-domain records visible to training: everything except the
    /// records of test users.
    pub fn target_train_records<'a>(&self, pair: &'a DomainPair) -> Vec<&'a RatingRecord> {
        pair.target.records.iter().filter(|r| !self.is_test(&r.user_id)).collect()
    }

    pub fn test_target_records<'a>(&self, pair: &'a DomainPair) -> Vec<&'a RatingRecord> {
        pair.target.records.iter().filter(|r| self.is_test(&r.user_id)).collect()
    }

    /// Fails if any target record of a test user is among `training`.
    pub fn assert_no_leakage<'a>(&self, training: impl IntoIterator<Item = &'a RatingRecord>) -> Result<()> {
        if let Some(r) = training.into_iter().find(|r| self.is_test(&r.user_id)) {
            return Err(Error::InvalidArgument(format!(
                "cold-start leakage: target record of test user `{}` on `{}` used in training",
                r.user_id, r.item_id
            )));
        }
        Ok(())
    }

    pub fn manifest_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Draws `floor(beta * |overlap|)` test users uniformly with the split seed.
pub fn split_cold_start(pair: &DomainPair, spec: &SplitSpec) -> Result<ColdSplit> {
    spec.validate()?;
    let n_test = (spec.beta * pair.overlap.len() as f64).floor() as usize;
    if n_test == 0 {
        return Err(Error::InvalidArgument(format!(
            "beta={} selects no test users from {} overlapping users",
            spec.beta,
            pair.overlap.len()
        )));
    }
    let mut users = pair.overlap.clone();
    let mut rng = RngStreams::new(spec.seed).stream("cold-split");
    users.shuffle(&mut rng);
    let mut test_users = users[..n_test].to_vec();
    let mut train_users = users[n_test..].to_vec();
    test_users.sort();
    train_users.sort();
    Ok(ColdSplit {
        beta: spec.beta,
        seed: spec.seed,
        train_users,
        test_users,
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WarmSplit {
    pub finetune: Vec<RatingRecord>,
    pub eval: Vec<RatingRecord>,
    /// Users with fewer than two records, sent entirely to `eval`.
    pub short_users: Vec<String>,
}

/// Per user: sort by (timestamp, item id) and put the earliest
/// `floor(warm_fraction * count)` records into the fine-tune set.
pub fn split_warm_start(records: &[RatingRecord], spec: &SplitSpec) -> Result<WarmSplit> {
    spec.validate()?;
    let mut by_user: BTreeMap<&str, Vec<&RatingRecord>> = BTreeMap::new();
    for r in records {
        by_user.entry(&r.user_id).or_default().push(r);
    }
    let mut out = WarmSplit::default();
    for (user, mut recs) in by_user {
        recs.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.item_id.cmp(&b.item_id)));
        if recs.len() < 2 {
            log::info!("warm split: user `{user}` has {} record(s); all go to eval", recs.len());
            out.short_users.push(user.to_string());
            out.eval.extend(recs.into_iter().cloned());
            continue;
        }
        let n_ft = (spec.warm_fraction * recs.len() as f64).floor() as usize;
        let (ft, ev) = recs.split_at(n_ft);
        out.finetune.extend(ft.iter().map(|r| (*r).clone()));
        out.eval.extend(ev.iter().map(|r| (*r).clone()));
    }
    Ok(out)
}

/// Users of `records`, sorted and deduplicated.
pub fn users_of(records: &[RatingRecord]) -> Vec<String> {
    records
        .iter()
        .map(|r| r.user_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}
