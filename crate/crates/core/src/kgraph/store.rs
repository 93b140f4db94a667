use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Outgoing,
    Incoming,
}

/// One endpoint's view of an edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Adjacent {
    pub neighbor: EntityId,
    pub relation: RelationId,
    pub direction: Direction,
}

/// Entities, relation types and the fact set of a knowledge graph.
#[derive(Clone, Debug, Default)]
pub struct KgStore {
    entities: Vec<String>,
    entity_ids: HashMap<String, EntityId>,
    relations: Vec<String>,
    relation_ids: HashMap<String, RelationId>,
    triples: Vec<Triple>,
    triple_set: HashSet<Triple>,
    adjacency: Vec<Vec<Adjacent>>,
}

impl KgStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the id of `name`, registering it if new.
    pub fn add_entity(&mut self, name: &str) -> EntityId {
        if let Some(&id) = self.entity_ids.get(name) {
            return id;
        }
        let id = EntityId(self.entities.len());
        self.entities.push(name.to_owned());
        self.entity_ids.insert(name.to_owned(), id);
        self.adjacency.push(Vec::new());
        id
    }

    pub fn add_relation(&mut self, name: &str) -> RelationId {
        if let Some(&id) = self.relation_ids.get(name) {
            return id;
        }
        let id = RelationId(self.relations.len());
        self.relations.push(name.to_owned());
        self.relation_ids.insert(name.to_owned(), id);
        id
    }

    /// Inserts a fact. Returns `Ok(false)` if it was already present.
    pub fn add_triple(&mut self, head: EntityId, relation: RelationId, tail: EntityId) -> Result<bool> {
        self.check_entity(head)?;
        self.check_entity(tail)?;
        self.check_relation(relation)?;
        let triple = Triple { head, relation, tail };
        if !self.triple_set.insert(triple) {
            return Ok(false);
        }
        self.triples.push(triple);
        self.adjacency[head.0].push(Adjacent { neighbor: tail, relation, direction: Direction::Outgoing });
        self.adjacency[tail.0].push(Adjacent { neighbor: head, relation, direction: Direction::Incoming });
        Ok(true)
    }

    /// Name-based insertion; registers unseen names.
    pub fn add_named(&mut self, head: &str, relation: &str, tail: &str) -> bool {
        let h = self.add_entity(head);
        let r = self.add_relation(relation);
        let t = self.add_entity(tail);
        self.add_triple(h, r, t).expect("ids were just registered")
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.triple_set.contains(triple)
    }

    pub fn adjacency(&self, id: EntityId) -> &[Adjacent] {
        &self.adjacency[id.0]
    }

    pub fn entity_name(&self, id: EntityId) -> Result<&str> {
        self.entities.get(id.0).map(String::as_str).ok_or_else(|| Error::lookup("entity", id.0))
    }

    pub fn relation_name(&self, id: RelationId) -> Result<&str> {
        self.relations.get(id.0).map(String::as_str).ok_or_else(|| Error::lookup("relation", id.0))
    }

    pub fn entity_id(&self, name: &str) -> Result<EntityId> {
        self.entity_ids.get(name).copied().ok_or_else(|| Error::lookup("entity", name))
    }

    pub fn relation_id(&self, name: &str) -> Result<RelationId> {
        self.relation_ids.get(name).copied().ok_or_else(|| Error::lookup("relation", name))
    }

    pub fn check_entity(&self, id: EntityId) -> Result<()> {
        if id.0 < self.entities.len() {
            Ok(())
        } else {
            Err(Error::lookup("entity", id.0))
        }
    }

    pub fn check_relation(&self, id: RelationId) -> Result<()> {
        if id.0 < self.relations.len() {
            Ok(())
        } else {
            Err(Error::lookup("relation", id.0))
        }
    }

    /// Parses `head<TAB>relation<TAB>tail` lines. Ids follow first-seen order.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut store = Self::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
                return Err(Error::Parse {
                    line: lineno + 1,
                    reason: "expected head<TAB>relation<TAB>tail".into(),
                });
            }
            store.add_named(fields[0], fields[1], fields[2]);
        }
        Ok(store)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for t in &self.triples {
            let _ = writeln!(out, "{}\t{}\t{}", self.entities[t.head.0], self.relations[t.relation.0], self.entities[t.tail.0]);
        }
        out
    }
}
