//! Experiment configuration and the five baseline presets.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::{AggregationMode, FederationConfig, MetaLearning};
use crate::kgraph::TranseConfig;
use crate::model::{ModelConfig, TemporalEncoderKind};
use crate::synthdata::{CohortConfig, NormScope, PartitionSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// Pooled data, one trainer, no privacy noise.
    Centralized,
    /// Weight averaging with privacy noise and a recurrent encoder.
    StandardFl,
    /// `StandardFl` plus the knowledge-graph path.
    KgFl,
    /// `StandardFl` with the time-aware transformer instead of the recurrence.
    TemporalFl,
    /// Graph path, transformer, meta-learning and quality-weighted
    /// private gradient aggregation.
    Full,
}

impl Baseline {
    pub const ALL: [Baseline; 5] =
        [Baseline::Centralized, Baseline::StandardFl, Baseline::KgFl, Baseline::TemporalFl, Baseline::Full];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::Centralized => "centralized",
            Baseline::StandardFl => "standard_fl",
            Baseline::KgFl => "kg_fl",
            Baseline::TemporalFl => "temporal_fl",
            Baseline::Full => "full",
        }
    }

    pub fn is_federated(self) -> bool {
        self != Baseline::Centralized
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Baseline::ALL.into_iter().find(|b| b.name() == s).ok_or_else(|| {
            let valid: Vec<&str> = Baseline::ALL.iter().map(|b| b.name()).collect();
            Error::Config(format!("unknown baseline `{s}`; valid ids: {}", valid.join(", ")))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub baseline: Baseline,
    /// Each seed regenerates the cohort, partition and folds.
    pub seeds: Vec<u64>,
    pub folds: usize,
    /// Number of folds actually run per seed; 0 runs all of them.
    pub max_folds: usize,
    pub hops: usize,
    pub val_fraction: f64,
    /// Evaluate the global model every this many rounds; the final round is
    /// always evaluated and 0 evaluates only the final round.
    pub eval_every: usize,
    /// Probability cut-off for accuracy, precision, recall and F1.
    pub decision_threshold: f64,
    /// Hospital counts for the node-scaling sweep run by `compare`; empty
    /// skips the sweep.
    pub scaling_nodes: Vec<usize>,
    pub cohort: CohortConfig,
    pub partition: PartitionSpec,
    pub model: ModelConfig,
    pub federation: FederationConfig,
    pub transe: TranseConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            baseline: Baseline::Full,
            seeds: vec![0],
            folds: 5,
            max_folds: 0,
            hops: 2,
            val_fraction: 0.2,
            eval_every: 1,
            decision_threshold: 0.5,
            scaling_nodes: Vec::new(),
            cohort: CohortConfig::default(),
            partition: PartitionSpec::default(),
            model: ModelConfig::default(),
            federation: FederationConfig::default(),
            transe: TranseConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// This configuration with `baseline` selected and its component
    /// toggles applied.
    pub fn for_baseline(&self, baseline: Baseline) -> Self {
        let mut cfg = self.clone();
        cfg.baseline = baseline;
        cfg.resolve();
        cfg
    }

    /// Forces the toggles owned by the baseline id; every other field is
    /// left as configured.
    pub fn resolve(&mut self) {
        let (encoder, use_kg, mode, meta, dp) = match self.baseline {
            Baseline::Centralized => {
                (TemporalEncoderKind::Gru, false, AggregationMode::FedavgWeights, MetaLearning::Off, false)
            }
            Baseline::StandardFl => {
                (TemporalEncoderKind::Gru, false, AggregationMode::FedavgWeights, MetaLearning::Off, true)
            }
            Baseline::KgFl => (TemporalEncoderKind::Gru, true, AggregationMode::FedavgWeights, MetaLearning::Off, true),
            Baseline::TemporalFl => {
                (TemporalEncoderKind::Transformer, false, AggregationMode::FedavgWeights, MetaLearning::Off, true)
            }
            Baseline::Full => {
                (TemporalEncoderKind::Transformer, true, AggregationMode::DpQualityGradient, MetaLearning::Fomaml, true)
            }
        };
        self.model.encoder = encoder;
        self.model.use_kg = use_kg;
        self.model.feature_count = self.cohort.channels;
        if use_kg {
            self.model.kg_input_dim = self.transe.dim;
        }
        self.federation.mode = mode;
        self.federation.meta_learning = meta;
        self.federation.dp.enabled = dp;
    }

    pub fn norm_scope(&self) -> NormScope {
        if self.baseline.is_federated() {
            NormScope::PerNode
        } else {
            NormScope::Pooled
        }
    }

    pub fn fold_count(&self) -> usize {
        if self.max_folds == 0 {
            self.folds
        } else {
            self.max_folds.min(self.folds)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config(format!("need at least 2 folds, got {}", self.folds)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("val_fraction must lie in [0, 1), got {}", self.val_fraction)));
        }
        if !(0.0..=1.0).contains(&self.decision_threshold) {
            return Err(Error::Config("decision_threshold must lie in [0, 1]".into()));
        }
        if self.scaling_nodes.contains(&0) {
            return Err(Error::Config("scaling_nodes entries must be positive".into()));
        }
        if self.federation.rounds == 0 {
            return Err(Error::Config("rounds must be positive".into()));
        }
        self.cohort.validate()?;
        self.partition.validate()?;
        self.model.validate()?;
        self.federation.validate()
    }
}
