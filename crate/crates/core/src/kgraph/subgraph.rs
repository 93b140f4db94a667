use std::collections::VecDeque;

use super::store::{EntityId, KgStore, RelationId};
use crate::error::Result;

pub const DEFAULT_HOPS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct SubgraphEdge {
    pub src: usize,
    pub dst: usize,
    pub relation: RelationId,
}

/// The neighbourhood of a patient's recorded features.
#[derive(Clone, Debug, PartialEq)]
pub struct PatientSubgraph {
    /// Ascending entity ids.
    pub node_ids: Vec<EntityId>,
    /// Store triples with both endpoints in the node set, as node indices.
    pub edges: Vec<SubgraphEdge>,
    /// Marks the seed (recorded-feature) nodes.
    pub seed_mask: Vec<bool>,
}

impl PatientSubgraph {
    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    /// Undirected neighbour lists by node index, without self loops, ascending.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.len()];
        for e in &self.edges {
            if e.src != e.dst {
                nb[e.src].push(e.dst);
                nb[e.dst].push(e.src);
            }
        }
        for list in &mut nb {
            list.sort_unstable();
            list.dedup();
        }
        nb
    }
}

/// All entities within `hops` undirected steps of any seed, plus every fact
/// among them.
pub fn extract_subgraph(store: &KgStore, seeds: &[EntityId], hops: usize) -> Result<PatientSubgraph> {
    for &s in seeds {
        store.check_entity(s)?;
    }
    let n = store.entity_count();
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    for &s in seeds {
        if dist[s.0] != 0 {
            dist[s.0] = 0;
            queue.push_back(s);
        }
    }
    while let Some(u) = queue.pop_front() {
        let du = dist[u.0];
        if du == hops {
            continue;
        }
        for adj in store.adjacency(u) {
            if dist[adj.neighbor.0] == usize::MAX {
                dist[adj.neighbor.0] = du + 1;
                queue.push_back(adj.neighbor);
            }
        }
    }

    let mut index = vec![usize::MAX; n];
    let mut node_ids = Vec::new();
    let mut seed_mask = Vec::new();
    for (e, &d) in dist.iter().enumerate() {
        if d != usize::MAX {
            index[e] = node_ids.len();
            node_ids.push(EntityId(e));
            seed_mask.push(d == 0);
        }
    }

    let mut edges = Vec::new();
    for &id in &node_ids {
        for adj in store.adjacency(id) {
            if adj.direction == super::store::Direction::Outgoing && index[adj.neighbor.0] != usize::MAX {
                edges.push(SubgraphEdge { src: index[id.0], dst: index[adj.neighbor.0], relation: adj.relation });
            }
        }
    }
    edges.sort_unstable();
    Ok(PatientSubgraph { node_ids, edges, seed_mask })
}
