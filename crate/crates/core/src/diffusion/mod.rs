//! Variance-preserving diffusion over user embeddings: noise schedule,
//! time embedding, the conditional noise-prediction network, guidance and
//! the training loss.

pub mod embedding;
pub mod guidance;
pub mod loss;
pub mod schedule;
pub mod score_net;

pub use embedding::time_embedding;
pub use guidance::{combine_guided, guided_score, GuidanceConfig};
pub use loss::{dim_loss, dim_loss_with, q_sample_rows, DimDraws, LossNorm};
pub use schedule::{NoiseSchedule, ScheduleValues};
pub use score_net::{Condition, ScoreNetConfig, ScoreNetwork};
