use super::plan::{DataSpec, ExperimentPlan};
use crate::data::{
    build_domain_pair, five_core_filter, load_ratings_csv, split_cold_start, synth_generate, ColdSplit, DomainPair,
    RatingRecord,
};
use crate::error::{Error, Result};

pub const SOURCE_TAG: &str = "src";
pub const TARGET_TAG: &str = "tgt";

/// Applies the 5-core filter to each domain and builds the pair.
pub fn build_filtered_pair(source: Vec<RatingRecord>, target: Vec<RatingRecord>) -> Result<DomainPair> {
    build_domain_pair(five_core_filter(source)?, five_core_filter(target)?)
}

pub fn load_pair(spec: &DataSpec) -> Result<DomainPair> {
    match spec {
        DataSpec::Csv { source, target } => {
            let s = load_ratings_csv(source, SOURCE_TAG)?;
            let t = load_ratings_csv(target, TARGET_TAG)?;
            for (path, n) in [(source, s.clamped), (target, t.clamped)] {
                if n > 0 {
                    log::warn!("{}: clamped {n} ratings into [0, 5]", path.display());
                }
            }
            build_filtered_pair(s.records, t.records)
        }
        DataSpec::Synth(cfg) => {
            let d = synth_generate(cfg)?;
            build_filtered_pair(d.pair.source.records, d.pair.target.records)
        }
    }
}

/// Loaded data and the cold-start split of one experiment.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub pair: DomainPair,
    pub split: ColdSplit,
}

impl Experiment {
    pub fn prepare(pair: DomainPair, plan: &ExperimentPlan) -> Result<Self> {
        plan.validate()?;
        let split = split_cold_start(&pair, &plan.split)?;
        Ok(Self { pair, split })
    }

    pub fn load(plan: &ExperimentPlan) -> Result<Self> {
        let spec = plan
            .data
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("data: plan names no data source".into()))?;
        Self::prepare(load_pair(spec)?, plan)
    }
}
