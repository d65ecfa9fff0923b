//! Experiment orchestration: pretraining, alternating transfer training,
//! cold/warm evaluation, baselines and throughput measurement.

pub mod bench;
pub mod eval;
pub mod experiment;
pub mod persist;
pub mod plan;
pub mod train;

pub use bench::{bench_throughput, ThroughputReport};
pub use eval::{evaluate_cold, evaluate_records, run_baseline, target_interactions, warm_start_finetune, Baseline};
pub use experiment::{build_filtered_pair, load_pair, Experiment};
pub use persist::{load_model, save_model};
pub use plan::{CdrConfig, DataSpec, ExperimentPlan, Variant, WarmConfig};
pub use train::{
    cdr_data, pretrain, train_diffcdr, CdrData, Pretrained, TrainEvent, TrainLog, TrainObserver, TrainedDiffCDR,
};
