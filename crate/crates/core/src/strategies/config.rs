use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { kind: OptimizerKind::Adam, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentMeasure {
    Cosine,
    Dot,
}

/// Which head produces the validation meta-gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaObjective {
    /// A freshly initialized head fitted briefly on end-task training data.
    SeparateHead,
    /// The end-task head itself.
    SameHead,
}

/// Hyper-parameters shared by all training regimes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    /// Step size for the shared body.
    pub body_lr: f64,
    /// Step size for task heads.
    pub head_lr: f64,
    /// Step size for the raw task weights; zero freezes them.
    pub weight_lr: f64,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    /// Per-task overrides of `batch_size`.
    pub task_batch_sizes: IndexMap<String, usize>,
    pub meta_head_steps: usize,
    pub meta_head_lr: f64,
    pub meta_head_weight_decay: f64,
    pub meta_head_batch: usize,
    /// Steps between task-weight updates.
    pub meta_update_period: usize,
    pub alignment: AlignmentMeasure,
    pub meta_objective: MetaObjective,
    pub patience: usize,
    pub min_delta: f64,
    /// Total update budget of a run, across all phases.
    pub max_steps: usize,
    /// Steps between end-task validation evaluations.
    pub val_period: usize,
    /// Steps between trajectory rows.
    pub log_period: usize,
    /// Auxiliary-only steps taken before fine-tuning (pretrain strategy only).
    pub pretrain_steps: usize,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            body_lr: 1e-3,
            head_lr: 1e-3,
            weight_lr: 0.1,
            optimizer: OptimizerConfig::default(),
            batch_size: 32,
            task_batch_sizes: IndexMap::new(),
            meta_head_steps: 10,
            meta_head_lr: 1e-3,
            meta_head_weight_decay: 0.1,
            meta_head_batch: 16,
            meta_update_period: 1,
            alignment: AlignmentMeasure::Cosine,
            meta_objective: MetaObjective::SeparateHead,
            patience: 5,
            min_delta: 0.0,
            max_steps: 1000,
            val_period: 50,
            log_period: 1,
            pretrain_steps: 0,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("body_lr", self.body_lr),
            ("head_lr", self.head_lr),
            ("meta_head_lr", self.meta_head_lr),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.weight_lr >= 0.0 && self.weight_lr.is_finite()) {
            return Err(Error::Invalid(format!("weight_lr must be non-negative, got {}", self.weight_lr)));
        }
        if !(self.meta_head_weight_decay >= 0.0) || !(self.min_delta >= 0.0) {
            return Err(Error::Invalid("weight decay and min_delta must be non-negative".into()));
        }
        let counts = [
            ("patience", self.patience),
            ("meta_update_period", self.meta_update_period),
            ("val_period", self.val_period),
            ("log_period", self.log_period),
            ("batch_size", self.batch_size),
            ("meta_head_batch", self.meta_head_batch),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Invalid(format!("{name} must be at least 1")));
            }
        }
        if self.task_batch_sizes.values().any(|&b| b == 0) {
            return Err(Error::Invalid("task batch sizes must be at least 1".into()));
        }
        if self.pretrain_steps > self.max_steps {
            return Err(Error::Invalid("pretrain_steps exceeds max_steps".into()));
        }
        Ok(())
    }

    pub fn batch_size_for(&self, task: &str) -> usize {
        self.task_batch_sizes.get(task).copied().unwrap_or(self.batch_size)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_documented_values() {
        let c = TrainerConfig::default();
        assert_eq!(c.meta_head_steps, 10);
        assert_eq!(c.meta_head_lr, 1e-3);
        assert_eq!(c.meta_head_weight_decay, 0.1);
        assert_eq!(c.meta_head_batch, 16);
        assert_eq!(c.optimizer.kind, OptimizerKind::Adam);
        assert_eq!(c.val_period, 50);
        c.validate().unwrap();
    }

    #[test]
    fn validation_rejects_bad_values() {
        let bad = [
            TrainerConfig { body_lr: 0.0, ..Default::default() },
            TrainerConfig { patience: 0, ..Default::default() },
            TrainerConfig { meta_update_period: 0, ..Default::default() },
            TrainerConfig { weight_lr: -1.0, ..Default::default() },
            TrainerConfig { pretrain_steps: 5, max_steps: 4, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
        TrainerConfig { weight_lr: 0.0, ..Default::default() }.validate().unwrap();
    }

    #[test]
    fn json_fills_defaults_and_rejects_unknown_fields() {
        let c: TrainerConfig = serde_json::from_str(r#"{"weight_lr": 0.05, "alignment": "dot"}"#).unwrap();
        assert_eq!(c.weight_lr, 0.05);
        assert_eq!(c.alignment, AlignmentMeasure::Dot);
        assert_eq!(c.batch_size, 32);
        assert!(serde_json::from_str::<TrainerConfig>(r#"{"wieght_lr": 1}"#).is_err());
    }
}
