//! Pretraining of the base models and the alternating diffusion/alignment
//! training loop.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::plan::ExperimentPlan;
use crate::alignment::{alm_loss, task_loss, AlmLayer, NormOrder, TaskBatch};
use crate::base_models::{train_mf, train_tgt, EmbeddingTable, MfLog};
use crate::data::{ColdSplit, DomainPair, IdMap, RatingRecord};
use crate::diffusion::{dim_loss_with, DimDraws, ScoreNetwork};
use crate::error::{Error, Result};
use crate::samplers::{dpm_solver1, NetPredictor};
use crate::tensor_core::{AdamConfig, RngStreams, Tape, Tensor};

/// Base models of both domains.
#[derive(Clone, Debug)]
pub struct Pretrained {
    pub source: EmbeddingTable,
    pub target: EmbeddingTable,
    pub source_log: MfLog,
    pub target_log: MfLog,
}

/// Trains the source model on every source record and the target model on
/// the target records of non-test users.
pub fn pretrain(pair: &DomainPair, split: &ColdSplit, plan: &ExperimentPlan) -> Result<Pretrained> {
    plan.validate()?;
    split.assert_no_leakage(split.target_train_records(pair))?;
    let src = pair.source.interactions();
    let (source, source_log) = train_mf(
        &src,
        pair.source.users.len(),
        pair.source.items.len(),
        &plan.mf_config("source-mf"),
    )?;
    let (target, target_log) = train_tgt(pair, split, &plan.mf_config("target-mf"))?;
    Ok(Pretrained {
        source,
        target,
        source_log,
        target_log,
    })
}

/// Training inputs for the transfer model: one row per overlapping
/// training user.
#[derive(Clone, Debug)]
pub struct CdrData {
    pub users: Vec<String>,
    pub source_rows: Tensor,
    pub target_rows: Tensor,
    /// Target-domain `(item index, rating)` pairs of each user.
    pub ratings: Vec<Vec<(usize, f64)>>,
}

impl CdrData {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }
}

pub fn cdr_data(pair: &DomainPair, split: &ColdSplit, pre: &Pretrained) -> Result<CdrData> {
    if split.train_users.is_empty() {
        return Err(Error::Empty("no overlapping training users".into()));
    }
    let train: BTreeSet<&str> = split.train_users.iter().map(String::as_str).collect();
    let records: Vec<&RatingRecord> = pair
        .target
        .records
        .iter()
        .filter(|r| train.contains(r.user_id.as_str()))
        .collect();
    split.assert_no_leakage(records.iter().copied())?;
    let mut by_user: BTreeMap<&str, Vec<(usize, f64)>> = BTreeMap::new();
    for r in records {
        let item = pair.target.items.index_of(&r.item_id).expect("domain maps its items");
        by_user.entry(&r.user_id).or_default().push((item, r.rating));
    }
    let mut src_idx = Vec::with_capacity(train.len());
    let mut tgt_idx = Vec::with_capacity(train.len());
    let mut ratings = Vec::with_capacity(train.len());
    for u in &split.train_users {
        let (Some(s), Some(t)) = (pair.source.users.index_of(u), pair.target.users.index_of(u)) else {
            return Err(Error::InvalidArgument(format!("training user `{u}` missing from a domain")));
        };
        src_idx.push(s);
        tgt_idx.push(t);
        ratings.push(by_user.remove(u.as_str()).unwrap_or_default());
    }
    Ok(CdrData {
        users: split.train_users.clone(),
        source_rows: pre.source.users.gather_rows(&src_idx)?,
        target_rows: pre.target.users.gather_rows(&tgt_idx)?,
        ratings,
    })
}

/// Progress notifications from [`train_diffcdr`], in the order they occur.
#[derive(Debug)]
pub enum TrainEvent<'a> {
    DimUpdated {
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    Inferred {
        epoch: usize,
        batch: usize,
        u_hat: &'a Tensor,
    },
    AlmUpdated {
        epoch: usize,
        batch: usize,
        alm_loss: f64,
        task_loss: f64,
        /// Score-network checksums around the alignment step, when the
        /// observer asks for them.
        theta_before: Option<&'a str>,
        theta_after: Option<&'a str>,
    },
    EpochEnd {
        epoch: usize,
        loss: f64,
    },
}

pub trait TrainObserver {
    fn event(&mut self, event: &TrainEvent<'_>);

    /// Whether to checksum the score network around each alignment step.
    fn track_theta(&self) -> bool {
        false
    }
}

impl TrainObserver for () {
    fn event(&mut self, _event: &TrainEvent<'_>) {}
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean combined loss of each epoch.
    pub epoch_loss: Vec<f64>,
    pub stopped_early: bool,
    pub batches: usize,
}

/// Optimizer state of the transfer model during training.
pub(crate) struct CdrTrainer<'a> {
    plan: &'a ExperimentPlan,
    data: &'a CdrData,
    items: &'a Tensor,
    pub(crate) net: ScoreNetwork,
    pub(crate) alm: AlmLayer,
    adam: AdamConfig,
    lambda: f64,
    norm: NormOrder,
    noise_rng: ChaCha8Rng,
    init_rng: ChaCha8Rng,
}

impl<'a> CdrTrainer<'a> {
    pub(crate) fn new(plan: &'a ExperimentPlan, data: &'a CdrData, items: &'a Tensor) -> Result<Self> {
        let streams = RngStreams::new(plan.seed);
        let (lambda, norm) = plan.variant.resolve(&plan.loss)?;
        Ok(Self {
            plan,
            data,
            items,
            net: ScoreNetwork::new(plan.score_net.clone(), streams.derive_seed("score-net"))?,
            alm: AlmLayer::new(plan.base.k),
            adam: AdamConfig::with_lr(plan.cdr.lr),
            lambda,
            norm,
            noise_rng: streams.stream("dim-noise"),
            init_rng: streams.stream("train-solver-init"),
        })
    }

    /// One batch: diffusion step, inference, alignment step. Returns the
    /// combined alignment/task loss.
    pub(crate) fn step(
        &mut self,
        rows: &[usize],
        epoch: usize,
        batch: usize,
        obs: &mut dyn TrainObserver,
    ) -> Result<f64> {
        let plan = self.plan;
        let src = self.data.source_rows.gather_rows(rows)?;
        let tgt = self.data.target_rows.gather_rows(rows)?;

        let u_hat = if plan.variant.uses_diffusion() {
            let draws = DimDraws::sample(
                rows.len(),
                plan.base.k,
                &plan.schedule,
                plan.guidance.mask_prob,
                &mut self.noise_rng,
            );
            let tape = Tape::new();
            let loss = dim_loss_with(&tape, &self.net, &self.net.params, &tgt, &src, &plan.schedule, &draws, plan.dim_loss)?;
            let loss_value = loss.value().item()?;
            tape.backward_into(loss, &mut self.net.params)?;
            self.net.params.adam_step(&self.adam)?;
            obs.event(&TrainEvent::DimUpdated {
                epoch,
                batch,
                loss: loss_value,
            });
            let x_init = plan.solver.initial_state(&src, &mut self.init_rng);
            let predictor = NetPredictor {
                net: &self.net,
                cond: Some(&src),
                s: plan.guidance.s,
            };
            dpm_solver1(&predictor, &plan.schedule, &plan.solver, &x_init)?
        } else {
            src
        };
        obs.event(&TrainEvent::Inferred {
            epoch,
            batch,
            u_hat: &u_hat,
        });

        let theta_before = obs.track_theta().then(|| self.net.checksum());
        let tape = Tape::new();
        let alm = alm_loss(&tape, &self.alm, &self.alm.params, &u_hat, &tgt, self.norm)?;
        let alm_value = alm.value().item()?;
        let mut total = alm;
        let mut task_value = 0.0;
        if self.lambda > 0.0 {
            if let Some(tb) = self.task_batch(rows)? {
                let task = task_loss(&tape, &self.alm, &self.alm.params, &u_hat, &tb)?;
                task_value = task.value().item()?;
                total = total.add(task.scale(self.lambda)?)?;
            }
        }
        let combined = total.value().item()?;
        tape.backward_into(total, &mut self.alm.params)?;
        self.alm.params.adam_step(&self.adam)?;
        let theta_after = obs.track_theta().then(|| self.net.checksum());
        obs.event(&TrainEvent::AlmUpdated {
            epoch,
            batch,
            alm_loss: alm_value,
            task_loss: task_value,
            theta_before: theta_before.as_deref(),
            theta_after: theta_after.as_deref(),
        });
        Ok(combined)
    }

    /// Task-loss ratings of the batch users; `None` when they have none.
    fn task_batch(&self, rows: &[usize]) -> Result<Option<TaskBatch>> {
        let mut user_rows = Vec::new();
        let mut item_idx = Vec::new();
        let mut ratings = Vec::new();
        for (j, &r) in rows.iter().enumerate() {
            for &(item, rating) in &self.data.ratings[r] {
                user_rows.push(j);
                item_idx.push(item);
                ratings.push(rating);
            }
        }
        if ratings.is_empty() {
            return Ok(None);
        }
        Ok(Some(TaskBatch {
            user_rows,
            items: self.items.gather_rows(&item_idx)?,
            ratings,
        }))
    }
}

/// A trained transfer model together with the frozen base models it was
/// trained on.
#[derive(Clone, Debug)]
pub struct TrainedDiffCDR {
    pub plan: ExperimentPlan,
    pub source: EmbeddingTable,
    pub target: EmbeddingTable,
    pub source_users: IdMap,
    pub target_users: IdMap,
    pub target_items: IdMap,
    pub net: ScoreNetwork,
    pub alm: AlmLayer,
    pub log: TrainLog,
}

impl TrainedDiffCDR {
    /// Generated target-domain embeddings `û` for rows of source
    /// embeddings (the source rows themselves for the AT variant).
    pub fn generate(&self, source_rows: &Tensor) -> Result<Tensor> {
        if !self.plan.variant.uses_diffusion() {
            return Ok(source_rows.clone());
        }
        let mut rng = RngStreams::new(self.plan.seed).stream("inference");
        let x_init = self.plan.solver.initial_state(source_rows, &mut rng);
        let predictor = NetPredictor {
            net: &self.net,
            cond: Some(source_rows),
            s: self.plan.guidance.s,
        };
        dpm_solver1(&predictor, &self.plan.schedule, &self.plan.solver, &x_init)
    }

    /// Aligned target-space vectors `ALM(û)`.
    pub fn transfer(&self, source_rows: &Tensor) -> Result<Tensor> {
        self.alm.apply(&self.generate(source_rows)?)
    }

    /// Aligned vectors for the given users; `None` for users without a
    /// source embedding.
    pub fn user_vectors(&self, user_ids: &[&str]) -> Result<Vec<Option<Vec<f64>>>> {
        let known: Vec<(usize, usize)> = user_ids
            .iter()
            .enumerate()
            .filter_map(|(i, u)| self.source_users.index_of(u).map(|s| (i, s)))
            .collect();
        let mut out = vec![None; user_ids.len()];
        if known.is_empty() {
            return Ok(out);
        }
        let rows = self.source.users.gather_rows(&known.iter().map(|p| p.1).collect::<Vec<_>>())?;
        let aligned = self.transfer(&rows)?;
        for (j, &(i, _)) in known.iter().enumerate() {
            out[i] = Some(aligned.row(j).to_vec());
        }
        Ok(out)
    }
}

/// Alternating training over the overlapping training users. Each batch
/// takes one diffusion step, infers `û` with the updated network, then
/// takes one alignment step with `û` held constant.
pub fn train_diffcdr(
    pair: &DomainPair,
    split: &ColdSplit,
    pre: &Pretrained,
    plan: &ExperimentPlan,
    obs: &mut dyn TrainObserver,
) -> Result<TrainedDiffCDR> {
    plan.validate()?;
    let base_sums = (pre.source.checksum(), pre.target.checksum());
    let data = cdr_data(pair, split, pre)?;
    let mut trainer = CdrTrainer::new(plan, &data, &pre.target.items)?;
    let mut shuffle = RngStreams::new(plan.seed).stream("cdr-shuffle");
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = TrainLog::default();
    let (mut best, mut since_best) = (f64::INFINITY, 0);
    for epoch in 0..plan.cdr.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for (batch, rows) in order.chunks(plan.cdr.batch_size).enumerate() {
            total += trainer.step(rows, epoch, batch, obs)? * rows.len() as f64;
            log.batches += 1;
        }
        let loss = total / data.len() as f64;
        log::debug!("cdr epoch {epoch}: combined loss {loss:.5}");
        log.epoch_loss.push(loss);
        obs.event(&TrainEvent::EpochEnd { epoch, loss });
        if loss < best * (1.0 - plan.cdr.min_rel_improvement) {
            best = loss;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= plan.cdr.patience {
                log::info!("early stop after epoch {epoch}");
                log.stopped_early = true;
                break;
            }
        }
    }
    if (pre.source.checksum(), pre.target.checksum()) != base_sums {
        return Err(Error::InvalidArgument("base embeddings changed during transfer training".into()));
    }
    Ok(TrainedDiffCDR {
        plan: plan.clone(),
        source: pre.source.clone(),
        target: pre.target.clone(),
        source_users: pair.source.users.clone(),
        target_users: pair.target.users.clone(),
        target_items: pair.target.items.clone(),
        net: trainer.net,
        alm: trainer.alm,
        log,
    })
}
