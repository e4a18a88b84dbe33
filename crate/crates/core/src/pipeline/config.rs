use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::ann::Activation;
use crate::data::{plant_schema, DriftInjection, FeatureSchema};
use crate::drift::DriftSettings;
use crate::explain::ExplainSettings;
use crate::monitor::{ExceedanceRule, TriggerPolicy};
use crate::tuning::{SearchSpace, TrainBudget};
use crate::update::Strategy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        #[serde(default = "default_days")]
        days: u32,
        #[serde(default = "default_interval")]
        interval_secs: i64,
        #[serde(default)]
        drift: Option<DriftInjection>,
        /// Generator seed; falls back to the run seed.
        #[serde(default)]
        seed: Option<u64>,
    },
    Csv {
        path: PathBuf,
        #[serde(default = "plant_schema")]
        schema: FeatureSchema,
    },
}

fn default_days() -> u32 {
    30
}

fn default_interval() -> i64 {
    600
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            days: default_days(),
            interval_secs: default_interval(),
            drift: Some(DriftInjection::plant_default(12.0)),
            seed: None,
        }
    }
}

/// Trigger settings; baselines come from training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriggerConfig {
    pub multiplier: f64,
    pub consecutive_days: usize,
    pub rule: ExceedanceRule,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        Self {
            multiplier: 2.0,
            consecutive_days: 3,
            rule: ExceedanceRule::Both,
        }
    }
}

impl TriggerConfig {
    pub fn policy(&self, rmse_baseline: f64, mae_baseline: f64) -> TriggerPolicy {
        TriggerPolicy {
            rmse_baseline,
            mae_baseline,
            multiplier: self.multiplier,
            consecutive_days: self.consecutive_days,
            rule: self.rule,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: DataSource,
    pub batch_days: f64,
    /// Leading batches used for initial training.
    pub train_batches: usize,
    pub test_fraction: f64,
    pub trigger: TriggerConfig,
    pub search: SearchSpace,
    pub activation: Activation,
    pub initial_budget: TrainBudget,
    pub update_budget: TrainBudget,
    pub strategies: Vec<Strategy>,
    pub seed: u64,
    pub drift: DriftSettings,
    /// Importance profiles are skipped when absent.
    pub explain: Option<ExplainSettings>,
    /// Re-arm the trigger after each update.
    pub multi_cycle: bool,
    pub output_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            data: DataSource::default(),
            batch_days: 5.0,
            train_batches: 2,
            test_fraction: 0.2,
            trigger: TriggerConfig::default(),
            search: SearchSpace::default(),
            activation: Activation::Relu,
            initial_budget: TrainBudget::initial(),
            update_budget: TrainBudget::update(),
            strategies: Strategy::ALL.to_vec(),
            seed: 0,
            drift: DriftSettings::default(),
            explain: Some(ExplainSettings::default()),
            multi_cycle: false,
            output_dir: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |m: String| Err(PipelineError::Config(m));
        if !(self.batch_days > 0.0 && self.batch_days.is_finite()) {
            return fail(format!("batch_days must be > 0, got {}", self.batch_days));
        }
        if self.train_batches == 0 {
            return fail("train_batches must be >= 1".into());
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return fail(format!("test_fraction must be in (0, 1), got {}", self.test_fraction));
        }
        if self.strategies.is_empty() {
            return fail("at least one strategy is required".into());
        }
        if self.strategies.iter().collect::<BTreeSet<_>>().len() != self.strategies.len() {
            return fail("strategies must not repeat".into());
        }
        if !(self.trigger.multiplier > 1.0) || self.trigger.consecutive_days == 0 {
            return fail("trigger needs multiplier > 1 and consecutive_days >= 1".into());
        }
        self.search.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        for b in [&self.initial_budget, &self.update_budget] {
            b.config(1e-3, 0).validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        if self.drift.bins < 2 {
            return fail("drift.bins must be >= 2".into());
        }
        if self.drift.permutations < crate::drift::MIN_PERMUTATIONS {
            return fail(format!("drift.permutations must be >= {}", crate::drift::MIN_PERMUTATIONS));
        }
        if let Some(e) = &self.explain {
            if e.background_rows == 0 || e.eval_rows == 0 {
                return fail("explain row counts must be >= 1".into());
            }
        }
        match &self.data {
            DataSource::Synthetic {
                days,
                interval_secs,
                drift,
                ..
            } => {
                if *days == 0 || *interval_secs <= 0 {
                    return fail("synthetic days and interval_secs must be > 0".into());
                }
                if let Some(d) = drift {
                    d.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
                }
            }
            DataSource::Csv { schema, .. } => schema.validate().map_err(|e| PipelineError::Config(e.to_string()))?,
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let cfg = PipelineConfig::from_json("{}").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = PipelineConfig {
            strategies: vec![Strategy::Lltl],
            multi_cycle: true,
            ..PipelineConfig::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(PipelineConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            r#"{"strategies": []}"#,
            r#"{"strategies": ["lltl", "lltl"]}"#,
            r#"{"batch_days": 0}"#,
            r#"{"train_batches": 0}"#,
            r#"{"trigger": {"multiplier": 1.0}}"#,
            r#"{"unknown": 1}"#,
            r#"{"strategies": ["xtl"]}"#,
        ] {
            assert!(matches!(PipelineConfig::from_json(text), Err(PipelineError::Config(_))), "{text}");
        }
    }

    #[test]
    fn csv_source_defaults_to_plant_schema() {
        let cfg = PipelineConfig::from_json(r#"{"data": {"kind": "csv", "path": "x.csv"}}"#).unwrap();
        match cfg.data {
            DataSource::Csv { schema, .. } => assert_eq!(schema, plant_schema()),
            _ => panic!("expected csv"),
        }
    }
}
