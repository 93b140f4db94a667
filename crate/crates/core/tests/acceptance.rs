//! End-to-end acceptance checks. Each test prints a single `PASS` or `FAIL`
//! line straight to stderr so the outcome is visible even when the harness
//! captures output, then asserts.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use fedsepsis::evalcli::gradcheck::{run_gradchecks, TOLERANCE};
use fedsepsis::evalcli::{run_experiment, Baseline, ExperimentConfig, ExperimentOutput};
use fedsepsis::federation::{
    aggregate_fedavg, aggregate_quality_dp, local_adapt, local_train, train_centralized, AggregationMode, ClientState,
    ClientUpdate, FederationConfig, FederationServer, MetaLearning, RoundStatus,
};
use fedsepsis::kgraph::{extract_subgraph, init_embeddings, transe_score, EntityId, KgEmbeddings, KgStore, RelationId};
use fedsepsis::ledger::{EntryMeta, Ledger};
use fedsepsis::model::{time_features, ModelConfig, ParamLayout, ParamVector, SepsisModel, TemporalEncoderKind};
use fedsepsis::numcore::{Rng, Tensor};
use fedsepsis::privacy::{add_noise, clip, epsilon_per_round, epsilon_spent, DpConfig};
use fedsepsis::synthdata::calibration::trend_baseline_auc;
use fedsepsis::synthdata::{generate_cohort, CohortConfig, EpisodeWindow, NodeData, NormStats, Ontology, Sample};

fn report(id: usize, title: &str, pass: bool, detail: &str) {
    let line = format!("criterion {id:>2} {:<4} {title}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut err = std::io::stderr().lock();
    let _ = err.write_all(line.as_bytes());
    let _ = err.flush();
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn model_config(encoder: TemporalEncoderKind, use_kg: bool, layers: usize) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_heads: 2,
        n_layers: layers,
        d_ff: 12,
        d_kg: 4,
        kg_input_dim: 5,
        feature_count: 3,
        time_frequencies: 2,
        dropout_rate: 0.0,
        encoder,
        use_kg,
    }
}

fn random_store(rng: &mut Rng, entities: usize, triples: usize, relations: usize) -> KgStore {
    let mut kg = KgStore::new();
    for i in 0..entities {
        kg.add_entity(&format!("e{i}"));
    }
    for r in 0..relations {
        kg.add_relation(&format!("r{r}"));
    }
    let mut attempts = 0;
    while kg.triples().len() < triples && attempts < 20 * triples + 100 {
        attempts += 1;
        let (h, t) = (rng.below(entities), rng.below(entities));
        if h != t {
            kg.add_triple(EntityId(h), RelationId(rng.below(relations)), EntityId(t)).unwrap();
        }
    }
    kg
}

fn random_window(rng: &mut Rng, features: usize) -> EpisodeWindow {
    let steps = 1 + rng.below(6);
    let mut t = rng.uniform_range(0.0, 3.0);
    let mut timestamps = Vec::new();
    for _ in 0..steps {
        timestamps.push(t);
        t += rng.uniform_range(0.25, 4.0);
    }
    EpisodeWindow {
        patient_id: 0,
        timestamps,
        values: Tensor::new(vec![steps, features], (0..steps * features).map(|_| rng.normal()).collect()).unwrap(),
        observed_mask: (0..steps * features).map(|_| rng.bernoulli(0.7)).collect(),
        feature_entities: Vec::new(),
        label: u8::from(rng.bernoulli(0.5)),
    }
}

fn perturbed_params(model: &SepsisModel, rng: &mut Rng) -> ParamVector {
    let mut p = model.init_params(rng);
    for v in p.as_mut_slice() {
        *v += rng.uniform_range(-0.3, 0.3);
    }
    p
}

fn flat_vector(values: Vec<f64>) -> ParamVector {
    let mut layout = ParamLayout::new();
    layout.push("w", 1, values.len());
    ParamVector::from_flat(Arc::new(layout), values).unwrap()
}

fn update(id: usize, n_k: usize, quality: f64, payload: ParamVector) -> ClientUpdate {
    let byte_size = payload.byte_size();
    ClientUpdate { client_id: id, round: 0, payload, n_k, quality, pre_noise_norm: None, train_loss: 0.0, byte_size }
}

fn node_data(id: usize, train: Vec<Sample>, val: Vec<Sample>) -> NodeData {
    let f = train[0].window.feature_count();
    NodeData {
        node: id,
        train,
        val,
        test: Vec::new(),
        stats: NormStats { fill: vec![0.0; f], mean: vec![0.0; f], std: vec![1.0; f] },
    }
}

fn labelled_samples(rng: &mut Rng, n: usize, features: usize) -> Vec<Sample> {
    (0..n)
        .map(|i| {
            let mut window = random_window(rng, features);
            window.label = (i % 2) as u8;
            Sample { window, subgraph: None }
        })
        .collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn criterion_01_gradient_correctness() {
    let start = Instant::now();
    let checks = run_gradchecks(100, 2024).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let worst = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    let failing: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.component).collect();
    let enough = checks.iter().all(|c| c.instances >= 100);
    let pass = failing.is_empty() && enough && elapsed < 120.0;
    report(
        1,
        "finite-difference gradient checks",
        pass,
        &format!("{} components x 100 instances, max rel err {worst:.2e} (tol {TOLERANCE:.0e}), {elapsed:.1}s, failing {failing:?}", checks.len()),
    );
    assert!(pass);
}

/// `‖h + r − t‖²` from the raw embedding rows.
fn naive_transe(emb: &KgEmbeddings, h: usize, r: usize, t: usize) -> f64 {
    let (eh, er, et) = (emb.entity_vecs.row(h), emb.relation_vecs.row(r), emb.entity_vecs.row(t));
    let mut s = 0.0;
    for k in 0..eh.len() {
        s += (eh[k] + er[k] - et[k]) * (eh[k] + er[k] - et[k]);
    }
    s
}

/// Layer-one attention weights `softmax(Q Kᵀ / √d_h)` per head, computed
/// from the parameter segments with explicit loops.
fn naive_attention(cfg: &ModelConfig, p: &ParamVector, w: &EpisodeWindow) -> Vec<Vec<Vec<f64>>> {
    let (d, f, heads) = (cfg.d_model, cfg.feature_count, cfg.n_heads);
    let dh = d / heads;
    let seg = |n: &str| p.segment(n).unwrap().to_vec();
    let (iw, ib, tw, tb) = (seg("input.w"), seg("input.b"), seg("time.w"), seg("time.b"));
    let (wq, bq, wk, bk) = (seg("block0.wq"), seg("block0.bq"), seg("block0.wk"), seg("block0.bk"));
    let feats = time_features(&w.timestamps, cfg.time_frequencies).unwrap();
    let steps = w.timestamps.len();
    let mut x = vec![vec![0.0; d]; steps];
    for t in 0..steps {
        for j in 0..d {
            let mut acc = ib[j] + tb[j];
            for c in 0..f {
                acc += w.values.get(t, c) * iw[c * d + j];
                if w.observed_mask[t * f + c] {
                    acc += iw[(f + c) * d + j];
                }
            }
            for k in 0..feats.cols() {
                acc += feats.get(t, k) * tw[k * d + j];
            }
            x[t][j] = acc;
        }
    }
    let project = |wm: &[f64], b: &[f64]| -> Vec<Vec<f64>> {
        (0..steps).map(|t| (0..d).map(|j| b[j] + (0..d).map(|k| x[t][k] * wm[k * d + j]).sum::<f64>()).collect()).collect()
    };
    let (q, k) = (project(&wq, &bq), project(&wk, &bk));
    (0..heads)
        .map(|h| {
            (0..steps)
                .map(|i| {
                    let s: Vec<f64> = (0..steps)
                        .map(|j| (0..dh).map(|c| q[i][h * dh + c] * k[j][h * dh + c]).sum::<f64>() / (dh as f64).sqrt())
                        .collect();
                    let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = s.iter().map(|v| (v - m).exp()).sum();
                    s.iter().map(|v| (v - m).exp() / z).collect()
                })
                .collect()
        })
        .collect()
}

/// Graph-attention readout straight from its definition: a softmax over
/// `{i} ∪ N(i)` of leaky-rectified additive scores, then the mean over seed
/// nodes.
fn naive_gat(cfg: &ModelConfig, p: &ParamVector, emb: &KgEmbeddings, store: &KgStore, seeds: &[EntityId], hops: usize) -> Vec<f64> {
    let sub = extract_subgraph(store, seeds, hops).unwrap();
    let (din, dk) = (cfg.kg_input_dim, cfg.d_kg);
    let w = p.segment("gat.w").unwrap();
    let a = p.segment("gat.attn").unwrap();
    let z: Vec<Vec<f64>> = sub
        .node_ids
        .iter()
        .map(|e| (0..dk).map(|c| (0..din).map(|k| emb.entity_vecs.get(e.0, k) * w[k * dk + c]).sum()).collect())
        .collect();
    let members: BTreeSet<usize> = sub.node_ids.iter().map(|e| e.0).collect();
    let index_of = |e: usize| sub.node_ids.iter().position(|x| x.0 == e).unwrap();
    let mut neighbours: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); sub.len()];
    for t in store.triples() {
        if members.contains(&t.head.0) && members.contains(&t.tail.0) && t.head != t.tail {
            let (i, j) = (index_of(t.head.0), index_of(t.tail.0));
            neighbours[i].insert(j);
            neighbours[j].insert(i);
        }
    }
    let seed_set: BTreeSet<usize> = seeds.iter().map(|e| e.0).collect();
    let mut pooled: Vec<usize> = (0..sub.len()).filter(|&i| seed_set.contains(&sub.node_ids[i].0)).collect();
    if pooled.is_empty() {
        pooled = (0..sub.len()).collect();
    }
    let leaky = |u: f64| if u > 0.0 { u } else { 0.2 * u };
    let mut out = vec![0.0; dk];
    for &i in &pooled {
        let support: Vec<usize> = std::iter::once(i).chain(neighbours[i].iter().copied()).collect();
        let score = |j: usize| leaky((0..dk).map(|c| a[c] * z[i][c] + a[dk + c] * z[j][c]).sum());
        let e: Vec<f64> = support.iter().map(|&j| score(j)).collect();
        let m = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = e.iter().map(|v| (v - m).exp()).sum();
        for (idx, &j) in support.iter().enumerate() {
            let alpha = (e[idx] - m).exp() / denom;
            for c in 0..dk {
                out[c] += alpha * z[j][c] / pooled.len() as f64;
            }
        }
    }
    out
}

#[test]
fn criterion_02_equation_oracles() {
    const INSTANCES: usize = 50;
    const TOL: f64 = 1e-10;
    let mut rng = Rng::new(77);
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |name: &'static str, err: f64| {
        let e = worst.entry(name).or_insert(0.0);
        *e = if err.is_nan() { f64::INFINITY } else { e.max(err) };
    };

    for _ in 0..INSTANCES {
        let kg = random_store(&mut rng, 8, 12, 3);
        let emb = init_embeddings(&kg, 6, &mut rng);
        for t in kg.triples() {
            let fast = transe_score(&kg, &emb, t.head, t.relation, t.tail).unwrap();
            note("transe_score", (fast - naive_transe(&emb, t.head.0, t.relation.0, t.tail.0)).abs());
        }
    }

    for _ in 0..INSTANCES {
        let model = SepsisModel::new(model_config(TemporalEncoderKind::Transformer, false, 1), None).unwrap();
        let params = perturbed_params(&model, &mut rng);
        let sample = Sample { window: random_window(&mut rng, 3), subgraph: None };
        let cache = model.forward(&params, &sample, None).unwrap();
        let fast = &cache.attention()[0];
        let slow = naive_attention(model.config(), &params, &sample.window);
        for (h, head) in fast.iter().enumerate() {
            let flat: Vec<f64> = slow[h].iter().flatten().copied().collect();
            note("attention", max_abs_diff(head.data(), &flat));
        }
    }

    for _ in 0..INSTANCES {
        let k = 1 + rng.below(8);
        let len = 1 + rng.below(20);
        let updates: Vec<ClientUpdate> = (0..k)
            .map(|id| update(id, 1 + rng.below(100), 1.0, flat_vector((0..len).map(|_| rng.normal()).collect())))
            .collect();
        let fast = aggregate_fedavg(&updates).unwrap();
        let n: usize = updates.iter().map(|u| u.n_k).sum();
        let slow: Vec<f64> = (0..len)
            .map(|i| updates.iter().map(|u| u.n_k as f64 / n as f64 * u.payload.as_slice()[i]).sum())
            .collect();
        note("aggregate_fedavg", max_abs_diff(fast.as_slice(), &slow));
    }

    for _ in 0..INSTANCES {
        let model = SepsisModel::new(model_config(TemporalEncoderKind::Transformer, false, 2), None).unwrap();
        let theta = perturbed_params(&model, &mut rng);
        let count = 1 + rng.below(4);
        let support = labelled_samples(&mut rng, count, 3);
        let refs: Vec<&Sample> = support.iter().collect();
        let alpha = rng.uniform_range(0.001, 0.1);
        let fast = local_adapt(&model, &theta, &refs, alpha).unwrap();
        let mut slow = theta.as_slice().to_vec();
        for s in &support {
            let (_, g) = model.loss_and_grad(&theta, &[s], None).unwrap();
            for (v, gi) in slow.iter_mut().zip(g.as_slice()) {
                *v -= alpha * gi / support.len() as f64;
            }
        }
        note("local_adapt", max_abs_diff(fast.as_slice(), &slow));
    }

    for _ in 0..INSTANCES {
        let cfg = model_config(TemporalEncoderKind::Transformer, true, 1);
        let kg = random_store(&mut rng, 14, 22, 3);
        let emb = Arc::new(init_embeddings(&kg, cfg.kg_input_dim, &mut rng));
        let model = SepsisModel::new(cfg.clone(), Some(emb.clone())).unwrap();
        let params = perturbed_params(&model, &mut rng);
        let seeds: Vec<EntityId> = (0..1 + rng.below(3)).map(|_| EntityId(rng.below(14))).collect();
        let sub = extract_subgraph(&kg, &seeds, 2).unwrap();
        let fast = model.gat_encode(&sub, &params).unwrap();
        note("gat_update", max_abs_diff(fast.data(), &naive_gat(&cfg, &params, &emb, &kg, &seeds, 2)));
    }

    for _ in 0..INSTANCES {
        let len = 1 + rng.below(30);
        let scale = rng.uniform_range(0.01, 5.0);
        let g = flat_vector((0..len).map(|_| scale * rng.normal()).collect());
        let c = rng.uniform_range(0.1, 3.0);
        let norm = g.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
        let factor = if norm > c { c / norm } else { 1.0 };
        let slow: Vec<f64> = g.as_slice().iter().map(|v| v * factor).collect();
        note("clip", max_abs_diff(clip(&g, c).unwrap().as_slice(), &slow));
        let sigma = rng.uniform_range(0.1, 2.0);
        let stream = rng.below(1 << 20) as u64;
        let draw = rng.derive(&[stream]);
        let fast = add_noise(&g, sigma, c, &mut draw.clone());
        let mut z = draw;
        let slow: Vec<f64> = g.as_slice().iter().map(|v| v + sigma * c * z.normal()).collect();
        note("gaussian_noise", max_abs_diff(fast.as_slice(), &slow));
    }

    for _ in 0..INSTANCES {
        let k = 1 + rng.below(8);
        let len = 1 + rng.below(20);
        let w = flat_vector((0..len).map(|_| rng.normal()).collect());
        let updates: Vec<ClientUpdate> = (0..k)
            .map(|id| {
                let q = if rng.bernoulli(0.2) { 0.0 } else { rng.uniform() };
                update(id, 1 + rng.below(100), q, flat_vector((0..len).map(|_| rng.normal()).collect()))
            })
            .collect();
        let eta = rng.uniform_range(0.01, 2.0);
        let total: f64 = updates.iter().map(|u| u.n_k as f64 * u.quality).sum();
        let fast = aggregate_quality_dp(&w, &updates, eta).unwrap();
        let slow: Vec<f64> = (0..len)
            .map(|i| {
                w.as_slice()[i]
                    - eta * updates.iter().map(|u| u.n_k as f64 * u.quality / total * u.payload.as_slice()[i]).sum::<f64>()
            })
            .collect();
        match fast {
            Some(p) => note("aggregate_quality_dp", max_abs_diff(p.as_slice(), &slow)),
            None => note("aggregate_quality_dp", if total == 0.0 { 0.0 } else { f64::INFINITY }),
        }
    }

    let pass = worst.len() == 8 && worst.values().all(|&e| e <= TOL);
    let detail: Vec<String> = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
    report(2, "naive-formula oracles", pass, &format!("{INSTANCES} instances each; max abs err: {}", detail.join(", ")));
    assert!(pass);
}

#[test]
fn criterion_03_federation_matches_centralized() {
    let mut rng = Rng::new(303);
    let model = SepsisModel::new(model_config(TemporalEncoderKind::Gru, false, 1), None).unwrap();
    let theta = model.init_params(&mut rng);
    let data = labelled_samples(&mut rng, 12, 3);
    let val = labelled_samples(&mut rng, 6, 3);
    let cfg = FederationConfig {
        rounds: 20,
        batch_size: 0,
        local_lr: 0.1,
        mode: AggregationMode::FedavgWeights,
        meta_learning: MetaLearning::Off,
        dp: DpConfig { noise_multiplier: 0.0, ..DpConfig::disabled() },
        ..FederationConfig::default()
    };
    let mut clients: Vec<ClientState> =
        (0..5).map(|id| ClientState::new(id, node_data(id, data.clone(), val.clone())).unwrap()).collect();
    let central = train_centralized(&model, &theta, &data, &cfg, 11).unwrap();
    let mut server = FederationServer::new(&model, theta, cfg, 11).unwrap();
    let mut worst: f64 = 0.0;
    let mut completed = 0;
    for expected in &central {
        for c in clients.iter_mut() {
            c.quality = 1.0;
        }
        let rep = server.run_round(&mut clients).unwrap();
        completed += usize::from(rep.status == RoundStatus::Completed);
        worst = worst.max(max_abs_diff(server.params().as_slice(), expected.as_slice()));
    }
    let pass = central.len() == 20 && completed == 20 && worst < 1e-10;
    report(3, "federation equals centralized", pass, &format!("5 identical clients, 20 rounds, max per-round deviation {worst:.1e}"));
    assert!(pass);
}

#[test]
fn criterion_04_dp_mechanism() {
    let mut rng = Rng::new(404);
    let model = SepsisModel::new(model_config(TemporalEncoderKind::Transformer, false, 1), None).unwrap();
    let init = perturbed_params(&model, &mut rng);
    let mut max_norm: f64 = 0.0;
    let mut checked = 0usize;
    let mut norms_ok = true;
    for (mode, meta) in [
        (AggregationMode::FedavgWeights, MetaLearning::Off),
        (AggregationMode::DpQualityGradient, MetaLearning::Fomaml),
    ] {
        let clip_norm = 0.05;
        let cfg = FederationConfig {
            rounds: 10,
            batch_size: 4,
            local_lr: 0.5,
            mode,
            meta_learning: meta,
            dp: DpConfig { clip_norm, noise_multiplier: 0.5, ..DpConfig::default() },
            ..FederationConfig::default()
        };
        let mut clients: Vec<ClientState> = (0..4)
            .map(|id| {
                let n = 6 + rng.below(10);
                ClientState::new(id, node_data(id, labelled_samples(&mut rng, n, 3), labelled_samples(&mut rng, 4, 3))).unwrap()
            })
            .collect();
        let mut theta = init.clone();
        for round in 0..cfg.rounds {
            let updates: Vec<ClientUpdate> =
                clients.iter_mut().map(|c| local_train(&model, &theta, c, &cfg, round, 5).unwrap()).collect();
            for u in &updates {
                let norm = u.pre_noise_norm.expect("privacy is on");
                max_norm = max_norm.max(norm / clip_norm);
                norms_ok &= norm <= clip_norm;
                checked += 1;
            }
            theta = match mode {
                AggregationMode::FedavgWeights => aggregate_fedavg(&updates).unwrap(),
                AggregationMode::DpQualityGradient => aggregate_quality_dp(&theta, &updates, 1.0).unwrap().unwrap_or(theta),
            };
        }
    }

    let (sigma, c) = (0.7, 2.0);
    let zero = flat_vector(vec![0.0; 1000]);
    let mut draws = Vec::with_capacity(100_000);
    let mut noise_rng = Rng::new(4040);
    for _ in 0..100 {
        draws.extend_from_slice(add_noise(&zero, sigma, c, &mut noise_rng).as_slice());
    }
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let std = (draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let target = sigma * c;
    let mean_ok = mean.abs() <= 3.0 * target / n.sqrt();
    let std_ok = (std - target).abs() <= 0.05 * target;

    let eps: Vec<f64> = (0..=100).map(|r| epsilon_spent(0.5, 1e-5, r).unwrap().epsilon).collect();
    let monotone = eps.windows(2).all(|w| w[1] >= w[0]) && eps[0] == 0.0;
    let point = epsilon_per_round(4.8414, 1e-5);
    let point_ok = close(point, 1.0, 1e-3);

    let pass = norms_ok && checked == 80 && mean_ok && std_ok && monotone && point_ok;
    report(
        4,
        "differential-privacy mechanism",
        pass,
        &format!(
            "{checked} payloads, max norm/C {max_norm:.4}; noise mean {mean:.2e} std {std:.4} vs {target}; eps monotone {monotone}; eps1(4.8414, 1e-5) = {point:.5}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_05_subgraph_matches_bfs() {
    let mut rng = Rng::new(505);
    let mut mismatches = 0;
    let mut largest = 0;
    for _ in 0..100 {
        let entities = 2 + rng.below(199);
        let triples = rng.below(3 * entities);
        let kg = random_store(&mut rng, entities, triples, 4);
        largest = largest.max(entities);
        let seeds: Vec<EntityId> = (0..1 + rng.below(4)).map(|_| EntityId(rng.below(entities))).collect();
        let hops = rng.below(4);
        let sub = extract_subgraph(&kg, &seeds, hops).unwrap();

        let mut dist = vec![usize::MAX; entities];
        for s in &seeds {
            dist[s.0] = 0;
        }
        for level in 0..hops {
            let frontier: Vec<usize> = (0..entities).filter(|&e| dist[e] == level).collect();
            for e in frontier {
                for t in kg.triples() {
                    for (a, b) in [(t.head.0, t.tail.0), (t.tail.0, t.head.0)] {
                        if a == e && dist[b] == usize::MAX {
                            dist[b] = level + 1;
                        }
                    }
                }
            }
        }
        let nodes: BTreeSet<usize> = (0..entities).filter(|&e| dist[e] <= hops).collect();
        let edges: BTreeSet<(usize, usize, usize)> = kg
            .triples()
            .iter()
            .filter(|t| nodes.contains(&t.head.0) && nodes.contains(&t.tail.0))
            .map(|t| (t.head.0, t.relation.0, t.tail.0))
            .collect();
        let got_nodes: BTreeSet<usize> = sub.node_ids.iter().map(|e| e.0).collect();
        let got_edges: BTreeSet<(usize, usize, usize)> =
            sub.edges.iter().map(|e| (sub.node_ids[e.src].0, e.relation.0, sub.node_ids[e.dst].0)).collect();
        if got_nodes != nodes || got_edges != edges || got_edges.len() != sub.edges.len() {
            mismatches += 1;
        }
    }
    let pass = mismatches == 0;
    report(5, "subgraph extraction equals brute-force BFS", pass, &format!("100 graphs up to {largest} nodes, {mismatches} mismatches"));
    assert!(pass);
}

#[test]
fn criterion_06_ledger_tamper_detection() {
    let mut rng = Rng::new(606);
    let mut honest_ok = true;
    for _ in 0..20 {
        let mut ledger = Ledger::new();
        for i in 0..1 + rng.below(15) {
            let digest: [u8; 32] = std::array::from_fn(|_| rng.below(256) as u8);
            ledger.append(digest, 1000 * i as u64, EntryMeta { mode: "fedavg_weights".into(), client_count: 5, epsilon: 0.5 * i as f64 }).unwrap();
        }
        honest_ok &= ledger.verify().is_ok();
        honest_ok &= Ledger::from_jsonl(ledger.to_jsonl().as_bytes()).unwrap() == ledger;
    }

    let mut chain = Ledger::new();
    for i in 0..10u64 {
        let digest: [u8; 32] = std::array::from_fn(|_| rng.below(256) as u8);
        chain.append(digest, 60_000 * i, EntryMeta { mode: "dp_quality_gradient".into(), client_count: 5, epsilon: i as f64 }).unwrap();
    }
    let (mut mutations, mut wrong) = (0usize, 0usize);
    for entry in 0..10 {
        for field in 0..3 {
            for byte in 0..32 {
                for delta in 1..=255u8 {
                    let mut tampered = chain.clone();
                    let e = &mut tampered.entries_mut()[entry];
                    let digest = match field {
                        0 => &mut e.param_hash,
                        1 => &mut e.prev_hash,
                        _ => &mut e.entry_hash,
                    };
                    digest[byte] = digest[byte].wrapping_add(delta);
                    mutations += 1;
                    match tampered.verify() {
                        Err(r) if r.index == entry as u64 => {}
                        _ => wrong += 1,
                    }
                }
            }
        }
    }
    let mut truncated = chain.clone();
    truncated.entries_mut().truncate(6);
    let truncation_undetected = truncated.verify().is_ok();
    let pass = honest_ok && wrong == 0 && mutations == 10 * 3 * 32 * 255 && truncation_undetected;
    report(
        6,
        "ledger tamper detection",
        pass,
        &format!("honest chains verify {honest_ok}; {mutations} single-byte digest mutations, {wrong} missed or misplaced; tail truncation verifies (known limitation) {truncation_undetected}"),
    );
    assert!(pass);
}

/// The tuned experiment settings shared by the learning criteria.
fn tuned(n_patients: usize, rounds: usize, seeds: Vec<u64>, eval_every: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig { seeds, max_folds: 1, eval_every, ..ExperimentConfig::default() };
    cfg.cohort.n_patients = n_patients;
    cfg.federation.rounds = rounds;
    cfg
}

#[test]
fn criterion_07_learnability() {
    let start = Instant::now();
    let cfg = tuned(5000, 50, vec![0], 10).for_baseline(Baseline::Full);
    let ontology = Ontology::builtin();
    let cohort = generate_cohort(&CohortConfig { seed: 0, ..cfg.cohort.clone() }, &ontology).unwrap();
    let calibration = trend_baseline_auc(&cohort, 0.2, &mut Rng::new(7)).unwrap();
    let prevalence = cohort.prevalence();
    if calibration < 0.80 {
        report(7, "end-to-end learnability", false, &format!("trend-feature calibration AUC {calibration:.4} < 0.80; full run skipped"));
        panic!("calibration failed");
    }
    let out = run_experiment(&cfg).unwrap();
    let auc = out.report.runs[0].auc;
    let elapsed = start.elapsed().as_secs_f64();
    let pass = auc >= 0.85 && elapsed < 900.0;
    report(
        7,
        "end-to-end learnability",
        pass,
        &format!("n=5000, prevalence {prevalence:.3}, calibration AUC {calibration:.4}; full method AUC {auc:.4} after 50 rounds, {elapsed:.0}s"),
    );
    assert!(pass);
}

const DIRECTIONAL_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn directional_config() -> ExperimentConfig {
    tuned(2000, 30, DIRECTIONAL_SEEDS.to_vec(), 0)
}

fn full_runs() -> &'static ExperimentOutput {
    static FULL: OnceLock<ExperimentOutput> = OnceLock::new();
    FULL.get_or_init(|| run_experiment(&directional_config().for_baseline(Baseline::Full)).unwrap())
}

#[test]
fn criterion_08_directional_ordering() {
    let base = directional_config();
    let mut means = BTreeMap::new();
    for b in [Baseline::Centralized, Baseline::StandardFl, Baseline::KgFl, Baseline::TemporalFl] {
        means.insert(b, run_experiment(&base.for_baseline(b)).unwrap().report.summary.auc_mean);
    }
    means.insert(Baseline::Full, full_runs().report.summary.auc_mean);
    let order = [Baseline::Full, Baseline::TemporalFl, Baseline::KgFl, Baseline::StandardFl];
    let gaps: Vec<f64> = order.windows(2).map(|w| means[&w[0]] - means[&w[1]]).collect();
    let pass = gaps.iter().all(|&g| g >= 0.01);
    let listing: Vec<String> = order.iter().map(|b| format!("{b} {:.4}", means[b])).collect();
    let gap_text: Vec<String> = gaps.iter().map(|g| format!("{g:+.4}")).collect();
    report(
        8,
        "directional baseline ordering",
        pass,
        &format!(
            "5 seeds: {} (gaps {}); centralized {:.4} reported only",
            listing.join(" > "),
            gap_text.join(", "),
            means[&Baseline::Centralized]
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_personalization() {
    let out = full_runs();
    let alpha = out.report.config.federation.meta_lr;
    let mut loss_ok = true;
    let mut before: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut after: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for run in &out.report.runs {
        for p in &run.personalization {
            loss_ok &= p.val_loss_after <= p.val_loss_before;
            if let (Some(b), Some(a)) = (p.val_auc_before, p.val_auc_after) {
                before.entry(p.node).or_default().push(b);
                after.entry(p.node).or_default().push(a);
            }
        }
    }
    let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    let improved = before.keys().filter(|n| mean(&after[n]) >= mean(&before[n])).count();
    let nodes = out.report.runs[0].personalization.len();
    let pass = loss_ok && nodes == 5 && improved >= 4;
    report(
        9,
        "meta-learned personalization",
        pass,
        &format!("alpha {alpha}, 5 seeds: validation loss non-increasing on every node {loss_ok}; mean AUC not worse on {improved} of {nodes} nodes"),
    );
    assert!(pass);
}

fn tree_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn criterion_10_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tuned(300, 4, vec![3, 4], 2);
    cfg.transe.epochs = 20;
    let config_path = tmp.path().join("config.toml");
    std::fs::write(&config_path, cfg.to_toml().unwrap()).unwrap();
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_fedsepsis"))
            .arg("compare")
            .arg("--config")
            .arg(&config_path)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        tree_files(&out)
    };
    let (a, b) = (run("first"), run("second"));
    let reports = |m: &BTreeMap<String, Vec<u8>>| m.keys().filter(|k| k.ends_with(".csv") || k.ends_with(".jsonl")).count();
    let differing: Vec<&String> = a.keys().filter(|k| b.get(*k) != a.get(*k)).collect();
    let pass = a.len() == b.len() && differing.is_empty() && reports(&a) > 0 && a.contains_key("comparison.csv");
    report(
        10,
        "byte-identical reruns",
        pass,
        &format!("{} files ({} CSV and ledger files) per run, {} differ", a.len(), reports(&a), differing.len()),
    );
    assert!(pass);
}
