//! Matrix-factorization base models and the TGT / CMF / EMCDR baselines.

pub mod baselines;
pub mod mf;

pub use baselines::{train_cmf, train_emcdr, train_tgt, CmfModel, MappingConfig, MappingNet};
pub use mf::{init_table, mf_batch_loss, mse, predict_rating, train_mf, EmbeddingTable, MfConfig, MfLog};
