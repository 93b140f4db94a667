//! Medical knowledge graph: fact store, translation embeddings and
//! patient-specific neighbourhood extraction.

mod store;
mod subgraph;
mod transe;

pub use store::{Adjacent, Direction, EntityId, KgStore, RelationId, Triple};
pub use subgraph::{extract_subgraph, PatientSubgraph, SubgraphEdge, DEFAULT_HOPS};
pub use transe::{
    corrupt, filtered_tail_rank, init_embeddings, margin_ranking_loss, train_transe, transe_score, KgEmbeddings,
    TranseConfig, TranseTraining,
};
