use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::alignment::{LossWeights, NormOrder};
use crate::base_models::{MappingConfig, MfConfig};
use crate::data::{SplitSpec, SynthConfig};
use crate::diffusion::{GuidanceConfig, LossNorm, NoiseSchedule, ScoreNetConfig};
use crate::error::{Error, Result};
use crate::evaluation::EvalConfig;
use crate::samplers::SolverConfig;

/// Which parts of the model are trained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Diffusion, alignment and task loss.
    #[default]
    DAT,
    /// Diffusion and alignment; the task loss weight is forced to zero.
    DA,
    /// Alignment and task loss on the raw source embedding; no diffusion.
    AT,
}

impl Variant {
    pub fn uses_diffusion(self) -> bool {
        self != Variant::AT
    }

    /// Task-loss weight and alignment norm after applying the variant's
    /// overrides and defaults.
    pub fn resolve(self, w: &LossWeights) -> Result<(f64, NormOrder)> {
        let default_norm = match self {
            Variant::DA => NormOrder::SquaredL2,
            Variant::DAT | Variant::AT => NormOrder::L1,
        };
        let norm = match w.norm_order {
            Some(n) => NormOrder::from_u8(n)?,
            None => default_norm,
        };
        let lambda = if self == Variant::DA { 0.0 } else { w.lambda_task };
        Ok((lambda, norm))
    }
}

/// Where ratings come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    Csv { source: PathBuf, target: PathBuf },
    Synth(SynthConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CdrConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs without improvement of the combined loss before stopping.
    pub patience: usize,
    /// Relative improvement that counts as progress.
    pub min_rel_improvement: f64,
}

impl Default for CdrConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            lr: 1e-3,
            patience: 10,
            min_rel_improvement: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WarmConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for WarmConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 1e-3,
            batch_size: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentPlan {
    pub seed: u64,
    pub data: Option<DataSpec>,
    pub split: SplitSpec,
    pub base: MfConfig,
    pub score_net: ScoreNetConfig,
    pub schedule: NoiseSchedule,
    pub guidance: GuidanceConfig,
    pub dim_loss: LossNorm,
    pub solver: SolverConfig,
    pub loss: LossWeights,
    pub variant: Variant,
    pub cdr: CdrConfig,
    pub warm: WarmConfig,
    pub emcdr: MappingConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            seed: 0,
            data: None,
            split: SplitSpec::new(0.5, 0),
            base: MfConfig::default(),
            score_net: ScoreNetConfig::default(),
            schedule: NoiseSchedule::default(),
            guidance: GuidanceConfig::default(),
            dim_loss: LossNorm::default(),
            solver: SolverConfig::default(),
            loss: LossWeights::default(),
            variant: Variant::default(),
            cdr: CdrConfig::default(),
            warm: WarmConfig::default(),
            emcdr: MappingConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn invalid(key: &str, err: Error) -> Error {
    Error::InvalidArgument(format!("{key}: {err}"))
}

fn positive(key: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::InvalidArgument(format!("{key}: must be positive")));
    }
    Ok(())
}

fn positive_f(key: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{key}: must be a positive number, got {v}")));
    }
    Ok(())
}

impl ExperimentPlan {
    /// Settings used for the synthetic benchmark.
    pub fn benchmark(seed: u64) -> Self {
        Self {
            seed,
            data: Some(DataSpec::Synth(SynthConfig::benchmark(seed))),
            split: SplitSpec::new(0.5, seed),
            base: MfConfig {
                lr: 1e-2,
                ..MfConfig::default()
            },
            guidance: GuidanceConfig {
                s: 2.0,
                ..GuidanceConfig::default()
            },
            cdr: CdrConfig {
                batch_size: 16,
                ..CdrConfig::default()
            },
            ..Self::default()
        }
    }

    /// Checks every sub-config; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        self.split.validate().map_err(|e| invalid("split", e))?;
        positive("base.k", self.base.k)?;
        positive("base.batch_size", self.base.batch_size)?;
        positive_f("base.lr", self.base.lr)?;
        positive_f("base.init_std", self.base.init_std)?;
        self.score_net.validate().map_err(|e| invalid("score_net", e))?;
        if self.score_net.k != self.base.k {
            return Err(Error::InvalidArgument(format!(
                "score_net.k: must equal base.k ({}), got {}",
                self.base.k, self.score_net.k
            )));
        }
        self.schedule.validate().map_err(|e| invalid("schedule", e))?;
        self.guidance.validate().map_err(|e| invalid("guidance", e))?;
        self.solver.validate().map_err(|e| invalid("solver", e))?;
        self.loss.validate().map_err(|e| invalid("loss", e))?;
        positive("cdr.batch_size", self.cdr.batch_size)?;
        positive_f("cdr.lr", self.cdr.lr)?;
        positive("warm.batch_size", self.warm.batch_size)?;
        positive_f("warm.lr", self.warm.lr)?;
        positive("emcdr.batch_size", self.emcdr.batch_size)?;
        positive_f("emcdr.lr", self.emcdr.lr)?;
        positive("eval.k", self.eval.k)?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let plan: Self = serde_json::from_str(text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 of the canonical JSON form of the plan.
    pub fn config_hash(&self) -> Result<String> {
        let value = serde_json::to_value(self)?;
        let canonical = serde_json::to_string(&value)?;
        Ok(hex::encode(Sha256::digest(canonical.as_bytes())))
    }

    /// Base-model config with its seed derived from the plan seed.
    pub fn mf_config(&self, role: &str) -> MfConfig {
        MfConfig {
            seed: crate::tensor_core::RngStreams::new(self.seed).derive_seed(role),
            ..self.base.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let plan = ExperimentPlan::benchmark(3);
        plan.validate().unwrap();
        let back = ExperimentPlan::from_json(&plan.to_json().unwrap()).unwrap();
        assert_eq!(back, plan);
        assert_eq!(back.config_hash().unwrap(), plan.config_hash().unwrap());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentPlan::from_json(r#"{"sed": 1}"#).is_err());
        assert!(ExperimentPlan::from_json(r#"{"cdr": {"epoch": 1}}"#).is_err());
    }

    #[test]
    fn invalid_values_name_the_key() {
        let mut plan = ExperimentPlan::default();
        plan.guidance.mask_prob = 1.5;
        let msg = plan.validate().unwrap_err().to_string();
        assert!(msg.contains("guidance"), "{msg}");
    }

    #[test]
    fn variant_overrides() {
        let w = LossWeights {
            lambda_task: 0.5,
            norm_order: None,
        };
        assert_eq!(Variant::DA.resolve(&w).unwrap(), (0.0, NormOrder::SquaredL2));
        assert_eq!(Variant::DAT.resolve(&w).unwrap(), (0.5, NormOrder::L1));
        let w2 = LossWeights {
            norm_order: Some(2),
            ..w
        };
        assert_eq!(Variant::AT.resolve(&w2).unwrap(), (0.5, NormOrder::SquaredL2));
    }

    #[test]
    fn hash_changes_with_config() {
        let a = ExperimentPlan::default();
        let b = ExperimentPlan {
            seed: 1,
            ..ExperimentPlan::default()
        };
        assert_ne!(a.config_hash().unwrap(), b.config_hash().unwrap());
    }
}
