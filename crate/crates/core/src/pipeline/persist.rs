//! On-disk layout of a trained model directory:
//!
//! ```text
//! model.json       plan, config hash, id maps, training log, checksums
//! source.json      source-domain embedding table
//! target.json      target-domain embedding table
//! score_net.json   score network parameters
//! alm.json         alignment weight
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::plan::ExperimentPlan;
use super::train::{TrainLog, TrainedDiffCDR};
use crate::alignment::AlmLayer;
use crate::base_models::EmbeddingTable;
use crate::data::IdMap;
use crate::diffusion::ScoreNetwork;
use crate::error::{Error, Result};
use crate::tensor_core::checkpoint::{self, write_atomic};
use crate::tensor_core::ParamStore;

pub const MODEL_FILE: &str = "model.json";
const MODEL_FORMAT: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u32,
    config_hash: String,
    seed: u64,
    plan: ExperimentPlan,
    /// Task-loss weight and alignment norm actually used.
    lambda_task: f64,
    norm_order: u8,
    source_users: IdMap,
    target_users: IdMap,
    target_items: IdMap,
    log: TrainLog,
    checksums: BTreeMap<String, String>,
}

fn stores(model: &TrainedDiffCDR) -> [(&'static str, ParamStore); 4] {
    [
        ("source", model.source.to_store()),
        ("target", model.target.to_store()),
        ("score_net", model.net.params.clone()),
        ("alm", model.alm.params.clone()),
    ]
}

pub fn save_model(model: &TrainedDiffCDR, dir: &Path) -> Result<()> {
    let mut checksums = BTreeMap::new();
    for (name, store) in stores(model) {
        checkpoint::save(&store, &dir.join(format!("{name}.json")))?;
        checksums.insert(name.to_string(), store.checksum());
    }
    let (lambda_task, norm) = model.plan.variant.resolve(&model.plan.loss)?;
    let file = ModelFile {
        format_version: MODEL_FORMAT,
        config_hash: model.plan.config_hash()?,
        seed: model.plan.seed,
        plan: model.plan.clone(),
        lambda_task,
        norm_order: norm.as_u8(),
        source_users: model.source_users.clone(),
        target_users: model.target_users.clone(),
        target_items: model.target_items.clone(),
        log: model.log.clone(),
        checksums,
    };
    write_atomic(&dir.join(MODEL_FILE), serde_json::to_string_pretty(&file)?.as_bytes())
}

fn load_store(dir: &Path, name: &str, expected: Option<&String>) -> Result<ParamStore> {
    let path = dir.join(format!("{name}.json"));
    if !path.exists() {
        return Err(Error::MissingCheckpoint(path));
    }
    let store = checkpoint::load(&path)?;
    if expected != Some(&store.checksum()) {
        return Err(Error::Checkpoint(format!("{} does not match its recorded checksum", path.display())));
    }
    Ok(store)
}

pub fn load_model(dir: &Path) -> Result<TrainedDiffCDR> {
    let path = dir.join(MODEL_FILE);
    if !path.exists() {
        return Err(Error::MissingCheckpoint(path));
    }
    let file: ModelFile = serde_json::from_str(&std::fs::read_to_string(&path)?)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if file.format_version != MODEL_FORMAT {
        return Err(Error::Checkpoint(format!("unsupported model format {}", file.format_version)));
    }
    let source = EmbeddingTable::from_store(&load_store(dir, "source", file.checksums.get("source"))?)?;
    let target = EmbeddingTable::from_store(&load_store(dir, "target", file.checksums.get("target"))?)?;
    let net = ScoreNetwork::from_params(
        file.plan.score_net.clone(),
        load_store(dir, "score_net", file.checksums.get("score_net"))?,
    )?;
    let alm = AlmLayer::from_params(load_store(dir, "alm", file.checksums.get("alm"))?)?;
    if source.num_users() != file.source_users.len()
        || target.num_users() != file.target_users.len()
        || target.num_items() != file.target_items.len()
    {
        return Err(Error::Checkpoint("embedding tables do not match the recorded id maps".into()));
    }
    Ok(TrainedDiffCDR {
        plan: file.plan,
        source,
        target,
        source_users: file.source_users,
        target_users: file.target_users,
        target_items: file.target_items,
        net,
        alm,
        log: file.log,
    })
}
