//! Translation-based embeddings: a triple is plausible when `e_h + e_r ≈ e_t`.

use serde::{Deserialize, Serialize};

use super::store::{EntityId, KgStore, RelationId, Triple};
use crate::error::{Error, Result};
use crate::numcore::{Rng, Tensor};

/// Learned entity and relation vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct KgEmbeddings {
    pub entity_vecs: Tensor,
    pub relation_vecs: Tensor,
    pub dim: usize,
}

impl KgEmbeddings {
    pub fn entity(&self, id: EntityId) -> &[f64] {
        self.entity_vecs.row(id.0)
    }

    pub fn relation(&self, id: RelationId) -> &[f64] {
        self.relation_vecs.row(id.0)
    }

    /// Entity rows followed by relation rows.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.entity_vecs.data().to_vec();
        v.extend_from_slice(self.relation_vecs.data());
        v
    }

    pub fn from_flat(flat: &[f64], entities: usize, relations: usize, dim: usize) -> Self {
        let split = entities * dim;
        Self {
            entity_vecs: Tensor::from_parts(vec![entities, dim], flat[..split].to_vec()),
            relation_vecs: Tensor::from_parts(vec![relations, dim], flat[split..].to_vec()),
            dim,
        }
    }

    /// Scales every entity vector with norm above one back onto the unit sphere.
    pub fn normalize_entities(&mut self) {
        let d = self.dim;
        for row in self.entity_vecs.data_mut().chunks_mut(d) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
    }
}

/// `‖e_h + e_r − e_t‖²`; lower is more plausible.
pub fn transe_score(store: &KgStore, emb: &KgEmbeddings, h: EntityId, r: RelationId, t: EntityId) -> Result<f64> {
    store.check_entity(h)?;
    store.check_entity(t)?;
    store.check_relation(r)?;
    Ok(score_unchecked(emb, Triple { head: h, relation: r, tail: t }))
}

pub(crate) fn score_unchecked(emb: &KgEmbeddings, t: Triple) -> f64 {
    let (eh, er, et) = (emb.entity(t.head), emb.relation(t.relation), emb.entity(t.tail));
    (0..emb.dim).map(|k| {
        let u = eh[k] + er[k] - et[k];
        u * u
    }).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranseConfig {
    pub dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub margin: f64,
    pub batch_size: usize,
}

impl Default for TranseConfig {
    fn default() -> Self {
        Self { dim: 16, epochs: 200, lr: 0.01, margin: 1.0, batch_size: 16 }
    }
}

/// Trained embeddings plus the mean margin loss of every epoch.
#[derive(Clone, Debug)]
pub struct TranseTraining {
    pub embeddings: KgEmbeddings,
    pub epoch_losses: Vec<f64>,
}

/// Uniform initialization in `[−6/√d, 6/√d]`, entities projected to the unit ball.
pub fn init_embeddings(store: &KgStore, dim: usize, rng: &mut Rng) -> KgEmbeddings {
    let bound = 6.0 / (dim as f64).sqrt();
    let mut draw = |rows: usize| {
        let data = (0..rows * dim).map(|_| rng.uniform_range(-bound, bound)).collect();
        Tensor::from_parts(vec![rows, dim], data)
    };
    let entity_vecs = draw(store.entity_count());
    let relation_vecs = draw(store.relation_count());
    let mut emb = KgEmbeddings { entity_vecs, relation_vecs, dim };
    emb.normalize_entities();
    emb
}

/// Replaces head or tail (fair coin) with a different, uniformly drawn entity.
pub fn corrupt(triple: Triple, entity_count: usize, rng: &mut Rng) -> Triple {
    let replace_head = rng.bernoulli(0.5);
    let original = if replace_head { triple.head } else { triple.tail };
    let mut e = EntityId(rng.below(entity_count));
    while e == original && entity_count > 1 {
        e = EntityId(rng.below(entity_count));
    }
    if replace_head {
        Triple { head: e, ..triple }
    } else {
        Triple { tail: e, ..triple }
    }
}

/// `Σ max(0, margin + f(pos) − f(neg))` over `(pos, neg)` pairs, with its
/// gradient in [`KgEmbeddings::flatten`] layout.
pub fn margin_ranking_loss(emb: &KgEmbeddings, pairs: &[(Triple, Triple)], margin: f64) -> (f64, Vec<f64>) {
    let d = emb.dim;
    let rel_offset = emb.entity_vecs.len();
    let mut grad = vec![0.0; rel_offset + emb.relation_vecs.len()];
    let mut loss = 0.0;
    for &(pos, neg) in pairs {
        let hinge = margin + score_unchecked(emb, pos) - score_unchecked(emb, neg);
        if hinge <= 0.0 {
            continue;
        }
        loss += hinge;
        for (t, sign) in [(pos, 1.0), (neg, -1.0)] {
            let (eh, er, et) = (emb.entity(t.head), emb.relation(t.relation), emb.entity(t.tail));
            for k in 0..d {
                let g = sign * 2.0 * (eh[k] + er[k] - et[k]);
                grad[t.head.0 * d + k] += g;
                grad[rel_offset + t.relation.0 * d + k] += g;
                grad[t.tail.0 * d + k] -= g;
            }
        }
    }
    (loss, grad)
}

/// Minibatch SGD on the margin-ranking loss with one corrupted negative per
/// positive per epoch; entity vectors are renormalized after every epoch.
pub fn train_transe(store: &KgStore, cfg: &TranseConfig, rng: &mut Rng) -> Result<TranseTraining> {
    if store.triples().is_empty() {
        return Err(Error::Config("cannot train embeddings on an empty triple set".into()));
    }
    if cfg.margin <= 0.0 || cfg.dim == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("margin, dim and batch size must be positive".into()));
    }
    let mut emb = init_embeddings(store, cfg.dim, rng);
    let mut order: Vec<Triple> = store.triples().to_vec();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let n_ent = store.entity_count();
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let pairs: Vec<(Triple, Triple)> = batch.iter().map(|&t| (t, corrupt(t, n_ent, rng))).collect();
            let (loss, grad) = margin_ranking_loss(&emb, &pairs, cfg.margin);
            total += loss;
            if cfg.lr != 0.0 {
                let (ent, rel) = grad.split_at(emb.entity_vecs.len());
                for (w, g) in emb.entity_vecs.data_mut().iter_mut().zip(ent) {
                    *w -= cfg.lr * g;
                }
                for (w, g) in emb.relation_vecs.data_mut().iter_mut().zip(rel) {
                    *w -= cfg.lr * g;
                }
            }
        }
        emb.normalize_entities();
        epoch_losses.push(total / order.len() as f64);
    }
    Ok(TranseTraining { embeddings: emb, epoch_losses })
}

/// Filtered rank of the true tail among all entities (1 = best): candidates
/// that form another known fact are skipped.
pub fn filtered_tail_rank(store: &KgStore, emb: &KgEmbeddings, triple: Triple) -> usize {
    let truth = score_unchecked(emb, triple);
    let mut rank = 1;
    for e in 0..store.entity_count() {
        let cand = Triple { tail: EntityId(e), ..triple };
        if cand.tail == triple.tail || store.contains(&cand) {
            continue;
        }
        if score_unchecked(emb, cand) < truth {
            rank += 1;
        }
    }
    rank
}
