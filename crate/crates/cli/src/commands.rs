//! One function per subcommand. Each writes into `--out` through
//! [`OutDir`] and finishes with a manifest.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use diffcdr::base_models::{EmbeddingTable, MfLog};
use diffcdr::data::records::write_ratings_csv;
use diffcdr::data::{split_warm_start, synth_generate, RatingRecord};
use diffcdr::evaluation::MetricsReport;
use diffcdr::pipeline::{
    bench_throughput, evaluate_records, load_model, pretrain as pretrain_models, run_baseline, save_model,
    target_interactions, train_diffcdr, warm_start_finetune, Baseline, DataSpec, Experiment, ExperimentPlan,
    Pretrained, TrainedDiffCDR,
};
use diffcdr::tensor_core::checkpoint;
use diffcdr::tensor_core::Tensor;
use diffcdr::Error as CoreError;
use serde::Serialize;
use serde_json::{json, Value};

use crate::output::OutDir;
use crate::plan_file::{load_plan, PlanError};
use crate::GlobalArgs;

const SYNTH_SOURCE: &str = "source.csv";
const SYNTH_TARGET: &str = "target.csv";
const PLAN_FILE: &str = "plan.json";
const SPLIT_FILE: &str = "split.json";
const MODEL_FILES: [&str; 5] = ["model.json", "source.json", "target.json", "score_net.json", "alm.json"];

fn plan_for(g: &GlobalArgs, fallback: Option<&ExperimentPlan>) -> anyhow::Result<ExperimentPlan> {
    let plan = load_plan(g.plan.as_deref(), fallback, g.seed, &g.overrides)?;
    if plan.data.is_none() {
        return Err(PlanError("data: plan names no data source".into()).into());
    }
    Ok(plan)
}

fn hash(plan: &ExperimentPlan) -> anyhow::Result<String> {
    Ok(plan.config_hash()?)
}

fn load_experiment(plan: &ExperimentPlan) -> anyhow::Result<Experiment> {
    Experiment::load(plan).context("loading data")
}

fn load_checkpoint(dir: &Path) -> anyhow::Result<TrainedDiffCDR> {
    load_model(dir).with_context(|| format!("loading model from {}", dir.display()))
}

pub fn synth(g: &GlobalArgs) -> anyhow::Result<()> {
    let plan = plan_for(g, None)?;
    let Some(DataSpec::Synth(cfg)) = &plan.data else {
        return Err(PlanError("data: synth needs a `synth` data spec".into()).into());
    };
    let data = synth_generate(cfg)?;
    let mut out = OutDir::new(&g.out)?;
    out.write(SYNTH_SOURCE, write_ratings_csv(&data.pair.source.records, true).as_bytes())?;
    out.write(SYNTH_TARGET, write_ratings_csv(&data.pair.target.records, true).as_bytes())?;
    // the emitted plan reads the CSVs relative to its own directory
    let csv_plan = ExperimentPlan {
        data: Some(DataSpec::Csv {
            source: PathBuf::from(SYNTH_SOURCE),
            target: PathBuf::from(SYNTH_TARGET),
        }),
        ..plan.clone()
    };
    out.write_json(PLAN_FILE, &csv_plan)?;
    log::info!(
        "synth: {} source and {} target ratings in {}",
        data.pair.source.records.len(),
        data.pair.target.records.len(),
        out.path().display()
    );
    out.finish("synth", &hash(&plan)?, plan.seed)
}

#[derive(Serialize)]
struct PretrainLog<'a> {
    source_epoch_mse: &'a [f64],
    target_epoch_mse: &'a [f64],
}

pub fn pretrain(g: &GlobalArgs) -> anyhow::Result<()> {
    let plan = plan_for(g, None)?;
    let exp = load_experiment(&plan)?;
    let pre = pretrain_models(&exp.pair, &exp.split, &plan)?;
    let mut out = OutDir::new(&g.out)?;
    out.write("source.json", checkpoint::to_json(&pre.source.to_store())?.as_bytes())?;
    out.write("target.json", checkpoint::to_json(&pre.target.to_store())?.as_bytes())?;
    out.write(SPLIT_FILE, exp.split.manifest_json()?.as_bytes())?;
    out.write_json(
        "pretrain_log.json",
        &PretrainLog {
            source_epoch_mse: &pre.source_log.epoch_mse,
            target_epoch_mse: &pre.target_log.epoch_mse,
        },
    )?;
    out.write_json(PLAN_FILE, &plan)?;
    out.finish("pretrain", &hash(&plan)?, plan.seed)
}

/// Plan fields that determine the pretrained tables.
fn pretrain_key(plan: &ExperimentPlan) -> anyhow::Result<Value> {
    Ok(json!({
        "seed": plan.seed,
        "data": plan.data,
        "split": plan.split,
        "base": serde_json::to_value(&plan.base)?,
    }))
}

fn read_table(dir: &Path, name: &str) -> anyhow::Result<EmbeddingTable> {
    let path = dir.join(name);
    if !path.exists() {
        return Err(CoreError::MissingCheckpoint(path).into());
    }
    let store = checkpoint::load(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(EmbeddingTable::from_store(&store)?)
}

/// Reuses the tables of an earlier `pretrain` run after checking that it
/// was made with the same data, split and base-model settings.
fn load_pretrained(dir: &Path, plan: &ExperimentPlan, exp: &Experiment) -> anyhow::Result<Pretrained> {
    let plan_path = dir.join(PLAN_FILE);
    if !plan_path.exists() {
        return Err(CoreError::MissingCheckpoint(plan_path).into());
    }
    let earlier: ExperimentPlan = serde_json::from_str(&std::fs::read_to_string(&plan_path)?)
        .with_context(|| format!("reading {}", plan_path.display()))?;
    if pretrain_key(&earlier)? != pretrain_key(plan)? {
        bail!(
            "{} was pretrained with different seed, data, split or base settings",
            dir.display()
        );
    }
    let source = read_table(dir, "source.json")?;
    let target = read_table(dir, "target.json")?;
    if source.num_users() != exp.pair.source.users.len() || target.num_items() != exp.pair.target.items.len() {
        bail!("{}: table sizes do not match the loaded data", dir.display());
    }
    Ok(Pretrained {
        source,
        target,
        source_log: MfLog::default(),
        target_log: MfLog::default(),
    })
}

pub fn train(g: &GlobalArgs, pretrained: Option<&Path>) -> anyhow::Result<()> {
    let plan = plan_for(g, None)?;
    let exp = load_experiment(&plan)?;
    let pre = match pretrained {
        Some(dir) => load_pretrained(dir, &plan, &exp)?,
        None => pretrain_models(&exp.pair, &exp.split, &plan)?,
    };
    let model = train_diffcdr(&exp.pair, &exp.split, &pre, &plan, &mut ())?;
    log::info!(
        "train: {} epochs, final loss {:.4}",
        model.log.epoch_loss.len(),
        model.log.epoch_loss.last().copied().unwrap_or(f64::NAN)
    );
    let mut out = OutDir::new(&g.out)?;
    save_model(&model, out.path())?;
    for name in MODEL_FILES {
        out.record(name)?;
    }
    out.write(SPLIT_FILE, exp.split.manifest_json()?.as_bytes())?;
    out.write_json(PLAN_FILE, &plan)?;
    out.finish("train", &hash(&plan)?, plan.seed)
}

#[derive(Serialize)]
struct WarmReport {
    n_finetune_records: usize,
    /// The model as trained, on the warm evaluation records.
    cold: MetricsReport,
    /// The fine-tuned model on the same records.
    warm: MetricsReport,
}

#[derive(Serialize)]
struct EvalReport {
    model_config_hash: String,
    /// Baselines train on every source record, including test users'.
    baseline_source_data: &'static str,
    cold: MetricsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    warm: Option<WarmReport>,
    baselines: Vec<MetricsReport>,
}

fn strip_tag(id: &str) -> &str {
    id.split_once(':').map(|(_, i)| i).unwrap_or(id)
}

pub fn eval(g: &GlobalArgs, checkpoint_dir: &Path, warm: bool, baselines: &[String], ranks: bool) -> anyhow::Result<()> {
    let mut model = load_checkpoint(checkpoint_dir)?;
    let plan = plan_for(g, Some(&model.plan))?;
    let baselines: Vec<Baseline> = baselines
        .iter()
        .map(|b| b.parse::<Baseline>())
        .collect::<Result<_, _>>()?;
    let exp = load_experiment(&plan)?;
    if exp.split.test_users != exp_split_of(&model, &exp) {
        log::warn!("evaluation split differs from the one the model was trained with");
    }
    model.plan.warm = plan.warm.clone();
    let test: Vec<RatingRecord> = exp.split.test_target_records(&exp.pair).into_iter().cloned().collect();
    let (cold, summary) = evaluate_records(&model, &exp.pair, &test, &plan.eval)?;

    let mut out = OutDir::new(&g.out)?;
    if ranks {
        let kept: Vec<_> = target_interactions(&exp.pair, &test)
            .into_iter()
            .filter(|x| {
                let id = exp.pair.target.users.id_of(x.user).expect("indexed user");
                model.source_users.contains(id)
            })
            .collect();
        if kept.len() != summary.ranks.len() {
            bail!("rank count {} does not match {} scored records", summary.ranks.len(), kept.len());
        }
        let mut csv = String::from("user_id,item_id,rank\n");
        for (x, rank) in kept.iter().zip(&summary.ranks) {
            let user = exp.pair.target.users.id_of(x.user).expect("indexed user");
            let item = exp.pair.target.items.id_of(x.item).expect("indexed item");
            csv.push_str(&format!("{user},{},{rank}\n", strip_tag(item)));
        }
        out.write("ranks.csv", csv.as_bytes())?;
    }

    let warm_report = if warm {
        let split = split_warm_start(&test, &plan.split)?;
        let tuned = warm_start_finetune(&model, &exp.pair, &split.finetune)?;
        Some(WarmReport {
            n_finetune_records: split.finetune.len(),
            cold: evaluate_records(&model, &exp.pair, &split.eval, &plan.eval)?.0,
            warm: evaluate_records(&tuned, &exp.pair, &split.eval, &plan.eval)?.0,
        })
    } else {
        None
    };

    let mut baseline_reports = Vec::new();
    if !baselines.is_empty() {
        let pre = Pretrained {
            source: model.source.clone(),
            target: model.target.clone(),
            source_log: MfLog::default(),
            target_log: MfLog::default(),
        };
        for b in baselines {
            baseline_reports.push(run_baseline(b, &exp.pair, &exp.split, &pre, &plan)?);
        }
    }

    let report = EvalReport {
        model_config_hash: model.plan.config_hash()?,
        baseline_source_data: "all source records",
        cold,
        warm: warm_report,
        baselines: baseline_reports,
    };
    out.write_json("metrics.json", &report)?;
    out.write_json(PLAN_FILE, &plan)?;
    out.finish("eval", &hash(&plan)?, plan.seed)
}

/// Test users the model's own plan would hold out on this data.
fn exp_split_of(model: &TrainedDiffCDR, exp: &Experiment) -> Vec<String> {
    Experiment::prepare(exp.pair.clone(), &model.plan)
        .map(|e| e.split.test_users)
        .unwrap_or_default()
}

/// User ids from a CSV with a `user_id` column, or one id per line.
fn read_user_ids(path: &Path) -> anyhow::Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty()).peekable();
    let mut column = 0;
    if let Some(header) = lines.peek() {
        if let Some(i) = header.split(',').position(|c| c.trim() == "user_id") {
            column = i;
            lines.next();
        }
    }
    let mut ids = Vec::new();
    for (n, line) in lines.enumerate() {
        let id = line
            .split(',')
            .nth(column)
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| anyhow!("{}: row {} has no user id", path.display(), n + 1))?;
        ids.push(id.to_string());
    }
    if ids.is_empty() {
        bail!("{}: no user ids", path.display());
    }
    Ok(ids)
}

/// Source rows of the users the model knows, in input order.
fn source_rows(model: &TrainedDiffCDR, ids: &[String]) -> anyhow::Result<(Vec<String>, Tensor)> {
    let mut known = Vec::new();
    let mut rows = Vec::new();
    for id in ids {
        match model.source_users.index_of(id) {
            Some(i) => {
                known.push(id.clone());
                rows.push(i);
            }
            None => log::warn!("user `{id}` has no source embedding; skipped"),
        }
    }
    if known.is_empty() {
        bail!("none of the requested users has a source embedding");
    }
    Ok((known, model.source.users.gather_rows(&rows)?))
}

fn embedding_header(prefixes: &[&str], k: usize) -> String {
    let mut cols = vec!["user_id".to_string()];
    for p in prefixes {
        cols.extend((0..k).map(|j| format!("{p}{j}")));
    }
    cols.join(",") + "\n"
}

fn push_row(csv: &mut String, user: &str, blocks: &[&[f64]]) {
    csv.push_str(user);
    for block in blocks {
        for v in *block {
            csv.push_str(&format!(",{v}"));
        }
    }
    csv.push('\n');
}

pub fn sample(g: &GlobalArgs, checkpoint_dir: &Path, users: &Path) -> anyhow::Result<()> {
    let model = load_checkpoint(checkpoint_dir)?;
    let ids = read_user_ids(users)?;
    let (known, rows) = source_rows(&model, &ids)?;
    let generated = model.generate(&rows)?;
    let k = generated.cols();
    let mut csv = embedding_header(&["e"], k);
    for (i, id) in known.iter().enumerate() {
        push_row(&mut csv, id, &[generated.row(i)]);
    }
    let mut out = OutDir::new(&g.out)?;
    out.write("embeddings.csv", csv.as_bytes())?;
    out.finish("sample", &hash(&model.plan)?, model.plan.seed)
}

pub fn export_embeddings(g: &GlobalArgs, checkpoint_dir: &Path, users: Option<&Path>) -> anyhow::Result<()> {
    let model = load_checkpoint(checkpoint_dir)?;
    let ids = match users {
        Some(p) => read_user_ids(p)?,
        None => model.source_users.ids().to_vec(),
    };
    let (known, rows) = source_rows(&model, &ids)?;
    let generated = model.generate(&rows)?;
    let aligned = model.alm.apply(&generated)?;
    let k = rows.cols();
    let mut csv = embedding_header(&["src", "gen", "aligned"], k);
    for (i, id) in known.iter().enumerate() {
        push_row(&mut csv, id, &[rows.row(i), generated.row(i), aligned.row(i)]);
    }
    let mut out = OutDir::new(&g.out)?;
    out.write("embeddings.csv", csv.as_bytes())?;
    log::info!("export: {} users", known.len());
    out.finish("export-embeddings", &hash(&model.plan)?, model.plan.seed)
}

pub fn bench(g: &GlobalArgs, checkpoint_dir: &Path, users: usize, repetitions: usize) -> anyhow::Result<()> {
    let model = load_checkpoint(checkpoint_dir)?;
    let report = bench_throughput(&model, users, repetitions)?;
    log::info!(
        "bench: train {:.0} samples/s, inference {:.0} samples/s",
        report.train_samples_per_sec,
        report.infer_samples_per_sec
    );
    let mut out = OutDir::new(&g.out)?;
    out.write_json("throughput.json", &report)?;
    out.finish("bench", &hash(&model.plan)?, model.plan.seed)
}
