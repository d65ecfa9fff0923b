use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::train::{CdrData, CdrTrainer, TrainedDiffCDR};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub n_users: usize,
    pub repetitions: usize,
    pub batch_size: usize,
    pub nfe: usize,
    /// Median over repetitions.
    pub train_samples_per_sec: f64,
    pub infer_samples_per_sec: f64,
    pub train_seconds: Vec<f64>,
    pub infer_seconds: Vec<f64>,
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times one training pass (diffusion step, inference and alignment step
/// per batch, without task-loss ratings) and one inference pass over the
/// first `n_users` overlapping users of the model.
pub fn bench_throughput(model: &TrainedDiffCDR, n_users: usize, repetitions: usize) -> Result<ThroughputReport> {
    if repetitions < 3 {
        return Err(Error::InvalidArgument("throughput needs at least 3 repetitions".into()));
    }
    let pairs: Vec<(usize, usize, String)> = model
        .source_users
        .ids()
        .iter()
        .filter_map(|u| {
            let t = model.target_users.index_of(u)?;
            Some((model.source_users.index_of(u)?, t, u.clone()))
        })
        .take(n_users)
        .collect();
    if pairs.is_empty() {
        return Err(Error::Empty("model has no user present in both domains".into()));
    }
    let n = pairs.len();
    let data = CdrData {
        users: pairs.iter().map(|p| p.2.clone()).collect(),
        source_rows: model.source.users.gather_rows(&pairs.iter().map(|p| p.0).collect::<Vec<_>>())?,
        target_rows: model.target.users.gather_rows(&pairs.iter().map(|p| p.1).collect::<Vec<_>>())?,
        ratings: vec![Vec::new(); n],
    };
    let order: Vec<usize> = (0..n).collect();
    let mut train_seconds = Vec::with_capacity(repetitions);
    let mut infer_seconds = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let mut trainer = CdrTrainer::new(&model.plan, &data, &model.target.items)?;
        let start = Instant::now();
        for (b, rows) in order.chunks(model.plan.cdr.batch_size).enumerate() {
            trainer.step(rows, 0, b, &mut ())?;
        }
        train_seconds.push(start.elapsed().as_secs_f64());

        let start = Instant::now();
        model.transfer(&data.source_rows)?;
        infer_seconds.push(start.elapsed().as_secs_f64());
    }
    let rate = |secs: &[f64]| n as f64 / median(secs).max(1e-12);
    Ok(ThroughputReport {
        n_users: n,
        repetitions,
        batch_size: model.plan.cdr.batch_size,
        nfe: model.plan.solver.nfe,
        train_samples_per_sec: rate(&train_seconds),
        infer_samples_per_sec: rate(&infer_seconds),
        train_seconds,
        infer_seconds,
    })
}
