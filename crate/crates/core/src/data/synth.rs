//! Synthetic two-domain rating data with a known cross-domain map.
//!
//! Source user vectors are standard normal; a user's target vector is an
//! affine image `A u + b` plus Gaussian noise. Ratings are
//! `clip(3 + u·v + e, 0, 5)` with `e ~ N(0, obs_noise_std²)`.

use std::collections::HashMap;

use rand::seq::index;
use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::domain::{build_domain_pair, DomainPair};
use super::records::{RatingRecord, MAX_RATING, MIN_RATING};
use crate::error::{Error, Result};
use crate::tensor_core::rng::{normal, standard_normal};
use crate::tensor_core::{RngStreams, Tensor};

pub const GLOBAL_MEAN: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items_per_domain: usize,
    pub k: usize,
    pub overlap_fraction: f64,
    /// Std of the Gaussian noise added to the affine target map.
    pub noise_std: f64,
    #[serde(default = "default_obs_noise")]
    pub obs_noise_std: f64,
    #[serde(default = "default_ratings_per_user")]
    pub ratings_per_user: usize,
    pub seed: u64,
}

fn default_obs_noise() -> f64 {
    0.1
}

fn default_ratings_per_user() -> usize {
    40
}

impl SynthConfig {
    pub fn benchmark(seed: u64) -> Self {
        Self {
            n_users: 1000,
            n_items_per_domain: 500,
            k: 10,
            overlap_fraction: 1.0,
            noise_std: 0.2,
            obs_noise_std: default_obs_noise(),
            ratings_per_user: default_ratings_per_user(),
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.k < 2 {
            return bad(format!("k must be at least 2, got {}", self.k));
        }
        if !(self.overlap_fraction > 0.0 && self.overlap_fraction <= 1.0) {
            return bad(format!("overlap_fraction must lie in (0, 1], got {}", self.overlap_fraction));
        }
        if self.noise_std < 0.0 || self.obs_noise_std < 0.0 {
            return bad("noise levels must be non-negative".into());
        }
        if self.ratings_per_user < 5 || self.ratings_per_user > self.n_items_per_domain {
            return bad(format!(
                "ratings_per_user={} must lie in [5, n_items_per_domain={}]",
                self.ratings_per_user, self.n_items_per_domain
            ));
        }
        let n_overlap = self.n_overlap();
        let per_domain = n_overlap + (self.n_users - n_overlap) / 2;
        if per_domain * self.ratings_per_user < 5 * self.n_items_per_domain {
            return bad(format!(
                "{per_domain} users x {} ratings cannot give each of {} items 5 ratings",
                self.ratings_per_user, self.n_items_per_domain
            ));
        }
        Ok(())
    }

    fn n_overlap(&self) -> usize {
        ((self.overlap_fraction * self.n_users as f64).round() as usize).clamp(1, self.n_users)
    }
}

/// The vectors that generated a synthetic dataset.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    /// Row `i` belongs to `user_ids[i]` in both user tables.
    pub user_ids: Vec<String>,
    pub source_users: Tensor,
    pub target_users: Tensor,
    pub source_item_ids: Vec<String>,
    pub source_items: Tensor,
    pub target_item_ids: Vec<String>,
    pub target_items: Tensor,
    /// `A` as `[k, k]`; target = A · source + b + noise.
    pub map: Tensor,
    pub offset: Vec<f64>,
    user_rows: HashMap<String, usize>,
}

impl GroundTruth {
    pub fn user_row(&self, user_id: &str) -> Option<usize> {
        self.user_rows.get(user_id).copied()
    }

    /// Noise-free expected rating `3 + u·v` (before clipping).
    pub fn expected_rating(&self, users: &Tensor, items: &Tensor, user: usize, item: usize) -> f64 {
        GLOBAL_MEAN + dot(users.row(user), items.row(item))
    }
}

#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub pair: DomainPair,
    pub truth: GroundTruth,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let streams = RngStreams::new(cfg.seed);
    let k = cfg.k;
    let n = cfg.n_users;

    let mut vec_rng = streams.stream("synth-vectors");
    let source_users = standard_normal(&mut vec_rng, &[n, k]);
    let map = normal(&mut vec_rng, &[k, k], 1.0 / (k as f64).sqrt());
    let offset = normal(&mut vec_rng, &[k], 0.1).into_data();
    let source_items = standard_normal(&mut vec_rng, &[cfg.n_items_per_domain, k]);
    let target_items = standard_normal(&mut vec_rng, &[cfg.n_items_per_domain, k]);
    let noise = normal(&mut vec_rng, &[n, k], cfg.noise_std);

    // target = source · Aᵀ + b + noise, row by row
    let mut target_users = source_users.matmul(&map.transpose()?)?;
    for i in 0..n {
        for (j, t) in target_users.row_mut(i).iter_mut().enumerate() {
            *t += offset[j] + noise.row(i)[j];
        }
    }

    let user_ids: Vec<String> = (0..n).map(|u| format!("u{u:05}")).collect();
    let item_ids = |tag: &str| -> Vec<String> {
        (0..cfg.n_items_per_domain).map(|i| format!("{tag}:i{i:05}")).collect()
    };
    let source_item_ids = item_ids("src");
    let target_item_ids = item_ids("tgt");

    let n_overlap = cfg.n_overlap();
    let in_source = |u: usize| u < n_overlap || (u - n_overlap) % 2 == 0;
    let in_target = |u: usize| u < n_overlap || (u - n_overlap) % 2 == 1;

    let mut obs_rng = streams.stream("synth-ratings");
    let mut make = |users: &Tensor, items: &Tensor, ids: &[String], member: &dyn Fn(usize) -> bool| {
        let mut out = Vec::new();
        for u in (0..n).filter(|&u| member(u)) {
            let picks = index::sample(&mut obs_rng, cfg.n_items_per_domain, cfg.ratings_per_user);
            for it in picks.iter() {
                out.push(rate(&mut obs_rng, cfg, &user_ids[u], &ids[it], users.row(u), items.row(it)));
            }
        }
        out
    };
    let source_records = make(&source_users, &source_items, &source_item_ids, &in_source);
    let target_records = make(&target_users, &target_items, &target_item_ids, &in_target);

    for (name, recs) in [("source", &source_records), ("target", &target_records)] {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for r in recs.iter() {
            *counts.entry(&r.item_id).or_default() += 1;
        }
        let min = counts.values().copied().min().unwrap_or(0);
        if counts.len() < cfg.n_items_per_domain || min < 5 {
            return Err(Error::InvalidArgument(format!(
                "{name} domain: parameters leave some item with fewer than 5 ratings"
            )));
        }
    }

    let pair = build_domain_pair(source_records, target_records)?;
    let user_rows = user_ids.iter().enumerate().map(|(i, u)| (u.clone(), i)).collect();
    Ok(SynthDataset {
        config: cfg.clone(),
        pair,
        truth: GroundTruth {
            user_ids,
            source_users,
            target_users,
            source_item_ids,
            source_items,
            target_item_ids,
            target_items,
            map,
            offset,
            user_rows,
        },
    })
}

fn rate(rng: &mut ChaCha8Rng, cfg: &SynthConfig, user: &str, item: &str, u: &[f64], v: &[f64]) -> RatingRecord {
    let e: f64 = if cfg.obs_noise_std > 0.0 {
        let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
        z * cfg.obs_noise_std
    } else {
        0.0
    };
    RatingRecord {
        user_id: user.to_string(),
        item_id: item.to_string(),
        rating: (GLOBAL_MEAN + dot(u, v) + e).clamp(MIN_RATING, MAX_RATING),
        timestamp: rng.random_range(0..1_000_000),
    }
}
