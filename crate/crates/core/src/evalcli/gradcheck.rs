//! Finite-difference verification of every differentiable component on
//! random small instances.

use std::sync::Arc;

use serde::Serialize;

use crate::error::Result;
use crate::kgraph::{corrupt, extract_subgraph, init_embeddings, margin_ranking_loss, EntityId, KgEmbeddings, KgStore, RelationId};
use crate::model::{ModelConfig, ParamVector, SepsisModel, TemporalEncoderKind};
use crate::numcore::{grad_check_coords, Rng, Tensor};
use crate::synthdata::{EpisodeWindow, Sample};

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, Serialize)]
pub struct ComponentCheck {
    pub component: &'static str,
    pub instances: usize,
    pub max_rel_error: f64,
}

impl ComponentCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

fn tiny_config(encoder: TemporalEncoderKind) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_heads: 2,
        n_layers: 2,
        d_ff: 12,
        d_kg: 4,
        kg_input_dim: 5,
        feature_count: 3,
        time_frequencies: 2,
        dropout_rate: 0.0,
        encoder,
        use_kg: true,
    }
}

fn random_store(rng: &mut Rng, entities: usize, triples: usize) -> KgStore {
    let mut kg = KgStore::new();
    for i in 0..entities {
        kg.add_entity(&format!("e{i}"));
    }
    for r in 0..3 {
        kg.add_relation(&format!("r{r}"));
    }
    while kg.triples().len() < triples {
        let (h, t) = (rng.below(entities), rng.below(entities));
        if h != t {
            kg.add_triple(EntityId(h), RelationId(rng.below(3)), EntityId(t)).expect("ids in range");
        }
    }
    kg
}

fn random_window(rng: &mut Rng, features: usize) -> EpisodeWindow {
    let steps = 1 + rng.below(6);
    let mut t = rng.uniform_range(0.0, 3.0);
    let mut timestamps = Vec::with_capacity(steps);
    for _ in 0..steps {
        timestamps.push(t);
        t += rng.uniform_range(0.25, 4.0);
    }
    let values = (0..steps * features).map(|_| rng.normal()).collect();
    EpisodeWindow {
        patient_id: 0,
        timestamps,
        values: Tensor::new(vec![steps, features], values).expect("shape matches"),
        observed_mask: (0..steps * features).map(|_| rng.bernoulli(0.7)).collect(),
        feature_entities: Vec::new(),
        label: u8::from(rng.bernoulli(0.5)),
    }
}

struct Instance {
    model: SepsisModel,
    sample: Sample,
    params: ParamVector,
}

fn instance(rng: &mut Rng, encoder: TemporalEncoderKind) -> Result<Instance> {
    let cfg = tiny_config(encoder);
    let kg = random_store(rng, 12, 20);
    let emb = Arc::new(init_embeddings(&kg, cfg.kg_input_dim, rng));
    let seeds = [EntityId(rng.below(12)), EntityId(rng.below(12))];
    let subgraph = extract_subgraph(&kg, &seeds, 2)?;
    let window = random_window(rng, cfg.feature_count);
    let model = SepsisModel::new(cfg, Some(emb))?;
    let mut params = model.init_params(rng);
    for v in params.as_mut_slice() {
        *v += rng.uniform_range(-0.3, 0.3);
    }
    Ok(Instance { model, sample: Sample { window, subgraph: Some(subgraph) }, params })
}

fn check_model(inst: &Instance, prefixes: &[&str]) -> Result<f64> {
    let (_, grad) = inst.model.loss_and_grad(&inst.params, &[&inst.sample], None)?;
    let layout = inst.model.layout().clone();
    let value = |v: &[f64]| {
        let p = ParamVector::from_flat(layout.clone(), v.to_vec()).expect("same length");
        inst.model.loss(&p, &[&inst.sample]).unwrap_or(f64::NAN)
    };
    let coords: Vec<usize> = prefixes.iter().flat_map(|p| inst.model.coordinates_of(p)).collect();
    Ok(grad_check_coords(value, grad.as_slice(), inst.params.as_slice(), STEP, &coords)?.max_rel_error)
}

fn check_transe(rng: &mut Rng) -> Result<f64> {
    let kg = random_store(rng, 10, 15);
    let dim = 4;
    let mut emb = init_embeddings(&kg, dim, rng);
    for v in emb.relation_vecs.data_mut() {
        *v *= 0.5;
    }
    let pairs: Vec<_> = kg.triples().iter().map(|&t| (t, corrupt(t, kg.entity_count(), rng))).collect();
    let margin = 1.0;
    let (_, grad) = margin_ranking_loss(&emb, &pairs, margin);
    let (ne, nr) = (kg.entity_count(), kg.relation_count());
    let value = |v: &[f64]| margin_ranking_loss(&KgEmbeddings::from_flat(v, ne, nr, dim), &pairs, margin).0;
    let flat = emb.flatten();
    let all: Vec<usize> = (0..flat.len()).collect();
    Ok(grad_check_coords(value, &grad, &flat, STEP, &all)?.max_rel_error)
}

/// Checks each component on `instances` random instances.
pub fn run_gradchecks(instances: usize, seed: u64) -> Result<Vec<ComponentCheck>> {
    let mut rng = Rng::new(seed);
    let components: [(&'static str, Option<TemporalEncoderKind>, &[&str]); 7] = [
        ("transe_loss", None, &[]),
        ("graph_attention", Some(TemporalEncoderKind::Transformer), &["gat."]),
        ("temporal_encoding", Some(TemporalEncoderKind::Transformer), &["time.", "input."]),
        ("transformer_block", Some(TemporalEncoderKind::Transformer), &["block"]),
        ("recurrent_encoder", Some(TemporalEncoderKind::Gru), &["gru."]),
        ("fusion_head", Some(TemporalEncoderKind::Transformer), &["head."]),
        ("full_model", Some(TemporalEncoderKind::Transformer), &[""]),
    ];
    let mut out = Vec::with_capacity(components.len());
    for (component, encoder, prefixes) in components {
        let mut worst: f64 = 0.0;
        for _ in 0..instances {
            let err = match encoder {
                None => check_transe(&mut rng)?,
                Some(kind) => check_model(&instance(&mut rng, kind)?, prefixes)?,
            };
            worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
        }
        out.push(ComponentCheck { component, instances, max_rel_error: worst });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_components_pass_on_a_few_instances() {
        let checks = run_gradchecks(3, 7).unwrap();
        assert_eq!(checks.len(), 7);
        for c in &checks {
            assert!(c.passed(), "{c:?}");
        }
    }
}
