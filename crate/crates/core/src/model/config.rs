use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which sequence encoder produces `h_ts`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalEncoderKind {
    /// Self-attention over steps with Δt-aware time encodings.
    Transformer,
    /// Single-layer gated recurrence over steps; no time information.
    Gru,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    /// Width of the pooled knowledge-graph vector.
    pub d_kg: usize,
    /// Width of the frozen entity embeddings fed to the graph encoder.
    pub kg_input_dim: usize,
    pub feature_count: usize,
    /// Sinusoid frequencies per time signal (Δt and elapsed time).
    pub time_frequencies: usize,
    pub dropout_rate: f64,
    pub encoder: TemporalEncoderKind,
    pub use_kg: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 16,
            n_heads: 2,
            n_layers: 2,
            d_ff: 32,
            d_kg: 16,
            kg_input_dim: 16,
            feature_count: 7,
            time_frequencies: 4,
            dropout_rate: 0.0,
            encoder: TemporalEncoderKind::Transformer,
            use_kg: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("feature_count", self.feature_count),
            ("time_frequencies", self.time_frequencies),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model dimension {name} must be positive")));
        }
        if self.encoder == TemporalEncoderKind::Transformer && self.n_layers == 0 {
            return Err(Error::Config("transformer needs at least one layer".into()));
        }
        if self.use_kg && (self.d_kg == 0 || self.kg_input_dim == 0) {
            return Err(Error::Config("knowledge-graph widths must be positive".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config("dropout rate must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Width of the fused representation fed to the classifier.
    pub fn fused_width(&self) -> usize {
        self.d_model + if self.use_kg { self.d_kg } else { 0 }
    }
}
