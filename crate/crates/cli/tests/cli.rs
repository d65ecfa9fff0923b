use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

const SMALL: [&str; 7] = [
    "data.synth.n_users=120",
    "data.synth.n_items_per_domain=60",
    "data.synth.ratings_per_user=12",
    "base.epochs=30",
    "cdr.epochs=3",
    "solver.nfe=8",
    "warm.epochs=3",
];

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diffcdr"))
        .args(args)
        .env("DIFFCDR_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn error_line(out: &Output) -> Value {
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    let last = stderr.lines().last().expect("an error line");
    serde_json::from_str(last).expect("error line is JSON")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_args(cmd: &str) -> Vec<String> {
    let mut v = vec![cmd.to_string()];
    for s in SMALL {
        v.push("--set".into());
        v.push(s.into());
    }
    v
}

/// synth, then pretrain and train from the emitted plan. Returns the
/// synth and model directories.
fn pipeline(root: &Path) -> (PathBuf, PathBuf) {
    let synth = root.join("synth");
    let pre = root.join("pre");
    let model = root.join("model");
    let mut args = small_args("synth");
    args.extend(["--seed".into(), "3".into(), "--out".into(), p(&synth).into()]);
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    let plan = synth.join("plan.json");
    ok(&["pretrain", "--plan", p(&plan), "--out", p(&pre)]);
    ok(&["train", "--plan", p(&plan), "--pretrained", p(&pre), "--out", p(&model)]);
    (synth, model)
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn invalid_plans_exit_with_code_two_and_the_key_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["train", "--set", "cdr.batch_size=oops", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_line(&out);
    assert_eq!(err["error"], "invalid_plan");
    assert!(err["message"].as_str().unwrap().starts_with("cdr.batch_size"), "{err}");

    let out = run(&["pretrain", "--set", "cdr.unknown_knob=1", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out)["message"].as_str().unwrap().contains("unknown_knob"));

    let plan = dir.path().join("plan.json");
    std::fs::write(&plan, "{\"cdr\": {\"epochs\": -1}}").unwrap();
    let out = run(&["train", "--plan", p(&plan), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out)["message"].as_str().unwrap().starts_with("cdr.epochs"));
}

#[test]
fn missing_checkpoints_exit_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing-here");
    for cmd in ["eval", "export-embeddings", "bench"] {
        let out = run(&[cmd, "--checkpoint", p(&missing), "--out", p(dir.path())]);
        assert_eq!(out.status.code(), Some(3), "{cmd}");
        assert_eq!(error_line(&out)["error"], "missing_checkpoint");
    }
    let out = run(&["train", "--pretrained", p(&missing), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn full_pipeline_is_reproducible_and_manifested() {
    let root = tempfile::tempdir().unwrap();
    let (synth, model) = pipeline(root.path());

    // relative CSV paths in the synth plan resolve against its directory
    let plan: Value = serde_json::from_str(&std::fs::read_to_string(synth.join("plan.json")).unwrap()).unwrap();
    assert_eq!(plan["data"]["csv"]["source"], "source.csv");

    let eval_a = root.path().join("eval-a");
    let eval_b = root.path().join("eval-b");
    for dir in [&eval_a, &eval_b] {
        ok(&[
            "eval",
            "--checkpoint",
            p(&model),
            "--warm",
            "--baselines",
            "TGT,EMCDR",
            "--ranks",
            "--out",
            p(dir),
        ]);
    }
    for name in ["metrics.json", "ranks.csv", "manifest.json", "plan.json"] {
        let a = std::fs::read(eval_a.join(name)).unwrap();
        let b = std::fs::read(eval_b.join(name)).unwrap();
        assert!(a == b, "{name} differs between identical runs");
    }
    let metrics: Value = serde_json::from_str(&std::fs::read_to_string(eval_a.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["cold"]["mae"].as_f64().unwrap().is_finite());
    assert_eq!(metrics["baselines"].as_array().unwrap().len(), 2);
    assert!(metrics["warm"]["warm"]["mae"].as_f64().is_some());
    let ranks = std::fs::read_to_string(eval_a.join("ranks.csv")).unwrap();
    assert_eq!(
        ranks.lines().count() - 1,
        metrics["cold"]["n_eval_records"].as_u64().unwrap() as usize
    );

    for dir in [&synth, &model, &eval_a] {
        let m = manifest(dir);
        assert_eq!(m["seed"], 3);
        assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
        for (name, sum) in m["files"].as_object().unwrap() {
            let bytes = std::fs::read(dir.join(name)).unwrap();
            assert_eq!(sum.as_str().unwrap(), hex::encode(Sha256::digest(&bytes)), "{name}");
        }
    }
    assert_eq!(manifest(&model)["command"], "train");
    assert!(manifest(&model)["files"].get("score_net.json").is_some());
}

#[test]
fn exports_and_samples_one_row_per_known_user() {
    let root = tempfile::tempdir().unwrap();
    let (_, model) = pipeline(root.path());

    let export = root.path().join("export");
    ok(&["export-embeddings", "--checkpoint", p(&model), "--out", p(&export)]);
    let text = std::fs::read_to_string(export.join("embeddings.csv")).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert_eq!(header.split(',').count(), 1 + 3 * 10);
    let rows: Vec<&str> = lines.collect();
    let model_file: Value = serde_json::from_str(&std::fs::read_to_string(model.join("model.json")).unwrap()).unwrap();
    assert_eq!(rows.len(), model_file["source_users"].as_array().unwrap().len());

    let users = root.path().join("users.csv");
    let picked: Vec<&str> = rows.iter().take(5).map(|r| r.split(',').next().unwrap()).collect();
    std::fs::write(&users, format!("user_id\n{}\nnot-a-user\n", picked.join("\n"))).unwrap();
    let sample = root.path().join("sample");
    ok(&["sample", "--checkpoint", p(&model), "--users", p(&users), "--out", p(&sample)]);
    let text = std::fs::read_to_string(sample.join("embeddings.csv")).unwrap();
    let ids: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ids, picked);
    // the sampled vectors are the generated columns of the export
    for (row, line) in rows.iter().zip(text.lines().skip(1)) {
        let gen: Vec<&str> = row.split(',').skip(11).take(10).collect();
        let sampled: Vec<&str> = line.split(',').skip(1).collect();
        assert_eq!(gen, sampled);
    }

    let bench = root.path().join("bench");
    ok(&["bench", "--checkpoint", p(&model), "--users", "30", "--repetitions", "3", "--out", p(&bench)]);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(bench.join("throughput.json")).unwrap()).unwrap();
    assert_eq!(report["n_users"], 30);
}
