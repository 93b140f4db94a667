//! Synthetic ICU cohorts, preprocessing and non-IID partitioning.

pub mod calibration;
pub mod cohort;
pub mod dataset;
pub mod io;
pub mod ontology;
pub mod partition;
pub mod preprocess;
pub mod window;

pub use cohort::{generate_cohort, Cohort, CohortConfig, Latent};
pub use dataset::{assign_folds, build_fold, FoldData, FoldSpec, NodeData, NormScope};
pub use ontology::{ChannelSpec, Ontology};
pub use partition::{partition_noniid, FeatureShift, Partition, PartitionSpec};
pub use preprocess::{fit_norm_stats, forward_fill, preprocess, NormStats};
pub use window::{EpisodeWindow, WINDOW_HOURS};

use crate::kgraph::PatientSubgraph;

/// A preprocessed window together with its knowledge subgraph.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub window: EpisodeWindow,
    pub subgraph: Option<PatientSubgraph>,
}
