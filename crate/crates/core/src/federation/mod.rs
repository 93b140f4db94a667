//! Simulated federation: hospitals train locally, optionally after a
//! first-order meta-learning adaptation step, privatize what they send,
//! and a server aggregates either weights (size-weighted average) or
//! gradients (size- and quality-weighted step).
//!
//! Every round is recorded in a hash-chained ledger. Clients are processed
//! in ascending id order and each draws randomness from a stream keyed by
//! `(seed, client id, round)`, so results do not depend on the order in
//! which clients are supplied.

mod client;
mod server;

pub use client::{local_adapt, local_train, quality_of, sgd_epochs, ClientState, ClientUpdate, LocalOutcome};
pub use server::{aggregate_fedavg, aggregate_quality_dp, train_centralized, FederationServer, RoundReport, RoundStatus};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::privacy::DpConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    /// Clients send weights; the server takes the size-weighted mean.
    FedavgWeights,
    /// Clients send privatized cumulative (learning-rate-weighted) gradients;
    /// the server steps along their size- and quality-weighted mean.
    DpQualityGradient,
}

impl AggregationMode {
    pub fn name(self) -> &'static str {
        match self {
            AggregationMode::FedavgWeights => "fedavg_weights",
            AggregationMode::DpQualityGradient => "dp_quality_gradient",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaLearning {
    Off,
    Fomaml,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    /// Minibatch size; 0 means full batch.
    pub batch_size: usize,
    pub local_lr: f64,
    /// Adaptation step size `α`.
    pub meta_lr: f64,
    /// Samples in the adaptation batch; 0 means the whole training split.
    pub support_size: usize,
    /// Server step size `η` in gradient mode.
    pub global_lr: f64,
    pub mode: AggregationMode,
    pub meta_learning: MetaLearning,
    pub dp: DpConfig,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            rounds: 30,
            local_epochs: 1,
            batch_size: 32,
            local_lr: 0.2,
            meta_lr: 0.01,
            support_size: 64,
            global_lr: 1.0,
            mode: AggregationMode::FedavgWeights,
            meta_learning: MetaLearning::Off,
            dp: DpConfig::default(),
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        self.dp.validate()?;
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        if !(self.local_lr >= 0.0 && self.local_lr.is_finite()) {
            return Err(Error::Config(format!("local_lr must be nonnegative, got {}", self.local_lr)));
        }
        if self.mode == AggregationMode::DpQualityGradient {
            positive("global_lr", self.global_lr)?;
        }
        if self.meta_learning == MetaLearning::Fomaml {
            positive("meta_lr", self.meta_lr)?;
        }
        Ok(())
    }
}
