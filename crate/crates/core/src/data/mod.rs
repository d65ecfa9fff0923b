//! Rating ingest, the two-domain universe, and cold/warm splits.

pub mod core_filter;
pub mod domain;
pub mod records;
pub mod split;
pub mod synth;

pub use core_filter::{five_core_filter, k_core_filter};
pub use domain::{build_domain_pair, Domain, DomainPair, IdMap, Interaction};
pub use records::{load_ratings_csv, RatingRecord};
pub use split::{split_cold_start, split_warm_start, ColdSplit, SplitSpec, WarmSplit};
pub use synth::{synth_generate, GroundTruth, SynthConfig, SynthDataset};
