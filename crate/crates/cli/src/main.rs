mod commands;
mod output;
mod plan_file;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use diffcdr::Error as CoreError;

use crate::plan_file::PlanError;

#[derive(Parser)]
#[command(name = "diffcdr", version, about = "Diffusion-based cross-domain recommendation")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
pub struct GlobalArgs {
    /// Experiment plan (JSON). Defaults to the synthetic benchmark plan.
    #[arg(long, global = true)]
    plan: Option<PathBuf>,
    /// Overrides the plan seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Dotted-path plan override, e.g. `--set cdr.epochs=50`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generates a synthetic two-domain dataset and a plan that reads it.
    Synth,
    /// Trains the source and target matrix-factorization models.
    Pretrain,
    /// Trains the transfer model and writes a model directory.
    Train {
        /// Output directory of an earlier `pretrain` run to reuse.
        #[arg(long)]
        pretrained: Option<PathBuf>,
    },
    /// Evaluates a trained model on the cold-start test users.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also fine-tune on each test user's earliest records and evaluate
        /// on the rest.
        #[arg(long)]
        warm: bool,
        /// Comma-separated baselines to evaluate alongside (TGT, CMF, EMCDR).
        #[arg(long, value_delimiter = ',')]
        baselines: Vec<String>,
        /// Writes per-record ranks to ranks.csv.
        #[arg(long)]
        ranks: bool,
    },
    /// Writes generated target-domain embeddings for the listed users.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// CSV with a `user_id` column (or one id per line).
        #[arg(long)]
        users: PathBuf,
    },
    /// Writes source, generated and aligned embeddings per user.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Restricts the export to these users (default: every source user).
        #[arg(long)]
        users: Option<PathBuf>,
    },
    /// Measures training and inference throughput.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1024)]
        users: usize,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
    },
}

/// Exit code and error kind of a failed command.
fn classify(err: &anyhow::Error) -> (u8, &'static str) {
    for cause in err.chain() {
        if cause.downcast_ref::<PlanError>().is_some() {
            return (2, "invalid_plan");
        }
        if let Some(CoreError::MissingCheckpoint(_)) = cause.downcast_ref::<CoreError>() {
            return (3, "missing_checkpoint");
        }
    }
    (1, "error")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DIFFCDR_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let g = &cli.global;
    let result = match cli.command {
        Command::Synth => commands::synth(g),
        Command::Pretrain => commands::pretrain(g),
        Command::Train { pretrained } => commands::train(g, pretrained.as_deref()),
        Command::Eval {
            checkpoint,
            warm,
            baselines,
            ranks,
        } => commands::eval(g, &checkpoint, warm, &baselines, ranks),
        Command::Sample { checkpoint, users } => commands::sample(g, &checkpoint, &users),
        Command::ExportEmbeddings { checkpoint, users } => commands::export_embeddings(g, &checkpoint, users.as_deref()),
        Command::Bench {
            checkpoint,
            users,
            repetitions,
        } => commands::bench(g, &checkpoint, users, repetitions),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, kind) = classify(&err);
            let line = serde_json::json!({
                "error": kind,
                "code": code,
                "message": format!("{err:#}").replace('\n', " "),
            });
            eprintln!("{line}");
            ExitCode::from(code)
        }
    }
}
