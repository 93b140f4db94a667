//! Cross-validated experiment driver and its on-disk artifacts.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use super::config::{Baseline, ExperimentConfig};
use super::metrics::{auc, classification_metrics, Classification};
use crate::error::{Error, Result};
use crate::federation::{local_adapt, ClientState, FederationServer, RoundReport};
use crate::kgraph::{train_transe, KgEmbeddings};
use crate::ledger::Ledger;
use crate::model::{ParamVector, SepsisModel};
use crate::numcore::Rng;
use crate::synthdata::{
    assign_folds, build_fold, generate_cohort, partition_noniid, CohortConfig, FoldData, FoldSpec, NodeData, Ontology,
    Sample,
};

const TRANSE_STREAM: u64 = 0x7472_616e_7365;
const PARTITION_STREAM: u64 = 0x7061_7274;
const FOLD_STREAM: u64 = 0x666f_6c64;
const SPLIT_STREAM: u64 = 0x7370_6c69_74;
const INIT_STREAM: u64 = 0x696e_6974;
const FEDERATION_STREAM: u64 = 0x6665_64;

/// One row of the per-round log.
#[derive(Clone, Debug, Serialize)]
pub struct RoundRow {
    pub seed: u64,
    pub fold: usize,
    pub round: usize,
    pub mode: &'static str,
    pub status: String,
    pub train_loss: Option<f64>,
    /// Global-model validation AUC per node, in node order.
    pub node_val_auc: Vec<Option<f64>>,
    pub test_auc: Option<f64>,
    pub epsilon: Option<f64>,
    pub bytes: u64,
    pub ledger_hash: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct NodeMetrics {
    pub node: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub prevalence: f64,
    pub test_auc: Option<f64>,
    pub val_auc: Option<f64>,
}

/// Effect of one adaptation step from the final global model.
#[derive(Clone, Debug, Serialize)]
pub struct NodePersonalization {
    pub node: usize,
    pub val_loss_before: f64,
    pub val_loss_after: f64,
    pub val_auc_before: Option<f64>,
    pub val_auc_after: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub seed: u64,
    pub fold: usize,
    pub auc: f64,
    pub metrics: Classification,
    pub nodes: Vec<NodeMetrics>,
    pub personalization: Vec<NodePersonalization>,
    pub epsilon: Option<f64>,
    pub bytes: u64,
    pub ledger_head: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub runs: usize,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `"None"` without privacy noise, otherwise the `(ε, δ)` pair.
    pub privacy_guarantee: String,
    pub bytes_mean: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentReport {
    pub baseline: Baseline,
    pub config: ExperimentConfig,
    pub summary: Summary,
    pub runs: Vec<RunReport>,
}

/// Report plus the artifacts that are written next to it.
#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub rounds: Vec<RoundRow>,
    /// `(seed, fold, ledger)` per run.
    pub ledgers: Vec<(u64, usize, Ledger)>,
}

/// A fully prepared cross-validation fold.
pub struct PreparedFold {
    pub model: SepsisModel,
    pub data: FoldData,
    pub init: ParamVector,
    pub server_seed: u64,
}

/// Builds the cohort, embeddings, partition and folds for one seed.
pub fn prepare_seed(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<PreparedFold>> {
    let ontology = Ontology::builtin();
    let cohort = generate_cohort(&CohortConfig { seed, ..cfg.cohort.clone() }, &ontology)?;
    let channels = &ontology.channels[..cfg.cohort.channels];
    let embeddings: Option<Arc<KgEmbeddings>> = if cfg.model.use_kg {
        let trained = train_transe(&ontology.store, &cfg.transe, &mut Rng::for_stream(seed, &[TRANSE_STREAM]))?;
        Some(Arc::new(trained.embeddings))
    } else {
        None
    };
    let partition =
        partition_noniid(&cohort.windows, &cfg.partition, channels, &mut Rng::for_stream(seed, &[PARTITION_STREAM]))?;
    let folds = assign_folds(&cohort.windows, cfg.folds, &mut Rng::for_stream(seed, &[FOLD_STREAM]))?;
    let spec = FoldSpec {
        channels,
        store: cfg.model.use_kg.then_some(&ontology.store),
        hops: cfg.hops,
        val_fraction: cfg.val_fraction,
        scope: cfg.norm_scope(),
    };
    (0..cfg.fold_count())
        .map(|fold| {
            let data = build_fold(
                &cohort.windows,
                &partition,
                &folds,
                fold,
                &spec,
                &mut Rng::for_stream(seed, &[SPLIT_STREAM]),
            )?;
            let model = SepsisModel::new(cfg.model.clone(), embeddings.clone())?;
            let init = model.init_params(&mut Rng::for_stream(seed, &[INIT_STREAM, fold as u64]));
            let server_seed = Rng::for_stream(seed, &[FEDERATION_STREAM, fold as u64]).below(usize::MAX) as u64;
            Ok(PreparedFold { model, data, init, server_seed })
        })
        .collect()
}

fn labels(samples: &[&Sample]) -> Vec<u8> {
    samples.iter().map(|s| s.window.label).collect()
}

fn scores(model: &SepsisModel, params: &ParamVector, samples: &[&Sample]) -> Result<Vec<f64>> {
    samples.iter().map(|s| Ok(model.predict(params, s)?.probability)).collect()
}

fn defined_auc(model: &SepsisModel, params: &ParamVector, samples: &[&Sample]) -> Result<Option<f64>> {
    if samples.is_empty() {
        return Ok(None);
    }
    match auc(&scores(model, params, samples)?, &labels(samples)) {
        Ok(a) => Ok(Some(a)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn refs(samples: &[Sample]) -> Vec<&Sample> {
    samples.iter().collect()
}

/// Validation loss and AUC on each node before and after one adaptation
/// step of size `alpha` taken on that node's validation split.
pub fn personalization(
    model: &SepsisModel,
    params: &ParamVector,
    nodes: &[NodeData],
    alpha: f64,
) -> Result<Vec<NodePersonalization>> {
    nodes
        .iter()
        .filter(|n| !n.val.is_empty())
        .map(|n| {
            let val = refs(&n.val);
            let adapted = local_adapt(model, params, &val, alpha)?;
            Ok(NodePersonalization {
                node: n.node,
                val_loss_before: model.loss(params, &val)?,
                val_loss_after: model.loss(&adapted, &val)?,
                val_auc_before: defined_auc(model, params, &val)?,
                val_auc_after: defined_auc(model, &adapted, &val)?,
            })
        })
        .collect()
}

/// Trains one fold to completion, logging a row per round.
pub fn run_fold(
    cfg: &ExperimentConfig,
    seed: u64,
    prepared: PreparedFold,
    rows: &mut Vec<RoundRow>,
) -> Result<(RunReport, Ledger)> {
    let PreparedFold { model, data, init, server_seed } = prepared;
    let fold = data.fold;
    let mut clients: Vec<ClientState> =
        data.nodes.iter().cloned().map(|n| ClientState::new(n.node, n)).collect::<Result<_>>()?;
    let mut server = FederationServer::new(&model, init, cfg.federation.clone(), server_seed)?;
    let test = data.test_samples();
    let mut last: Option<RoundReport> = None;
    for _ in 0..cfg.federation.rounds {
        let report = server.run_round(&mut clients)?;
        let params = server.params();
        let evaluate = report.round == cfg.federation.rounds || (cfg.eval_every > 0 && report.round % cfg.eval_every == 0);
        let (node_val_auc, test_auc) = if evaluate {
            let nodes =
                data.nodes.iter().map(|n| defined_auc(&model, params, &refs(&n.val))).collect::<Result<Vec<_>>>()?;
            (nodes, defined_auc(&model, params, &test)?)
        } else {
            (vec![None; data.nodes.len()], None)
        };
        log::info!(
            "{} seed {seed} fold {fold} round {}: loss {:?} test auc {:?}",
            cfg.baseline,
            report.round,
            report.train_loss,
            test_auc
        );
        rows.push(RoundRow {
            seed,
            fold,
            round: report.round,
            mode: report.mode,
            status: format!("{:?}", report.status).to_lowercase(),
            train_loss: report.train_loss,
            node_val_auc,
            test_auc,
            epsilon: report.epsilon,
            bytes: if cfg.baseline.is_federated() { report.bytes_total } else { 0 },
            ledger_hash: report.ledger_hash.clone(),
        });
        last = Some(report);
    }
    let last = last.expect("at least one round");
    let params = server.params().clone();
    let test_scores = scores(&model, &params, &test)?;
    let test_labels = labels(&test);
    let metrics = classification_metrics(&test_scores, &test_labels, cfg.decision_threshold)?;
    let nodes = data
        .nodes
        .iter()
        .map(|n| {
            let local = refs(&n.test);
            Ok(NodeMetrics {
                node: n.node,
                train: n.train.len(),
                val: n.val.len(),
                test: n.test.len(),
                prevalence: n.train.iter().map(|s| f64::from(s.window.label)).sum::<f64>() / n.train.len() as f64,
                test_auc: defined_auc(&model, &params, &local)?,
                val_auc: defined_auc(&model, &params, &refs(&n.val))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let personalization = if cfg.federation.meta_learning == crate::federation::MetaLearning::Fomaml {
        personalization(&model, &params, &data.nodes, cfg.federation.meta_lr)?
    } else {
        Vec::new()
    };
    let report = RunReport {
        seed,
        fold,
        auc: auc(&test_scores, &test_labels)?,
        metrics,
        nodes,
        personalization,
        epsilon: last.epsilon,
        bytes: if cfg.baseline.is_federated() { last.bytes_total } else { 0 },
        ledger_head: last.ledger_hash,
    };
    Ok((report, server.ledger().clone()))
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn summarize(cfg: &ExperimentConfig, runs: &[RunReport]) -> Summary {
    let auc_mean = mean(runs.iter().map(|r| r.auc));
    let auc_std = if runs.len() > 1 {
        (runs.iter().map(|r| (r.auc - auc_mean).powi(2)).sum::<f64>() / (runs.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    let privacy_guarantee = if cfg.federation.dp.enabled {
        let eps = runs.iter().filter_map(|r| r.epsilon).fold(0.0, f64::max);
        format!("(epsilon = {}, delta = {})", format_epsilon(eps), cfg.federation.dp.delta)
    } else {
        "None".to_string()
    };
    Summary {
        runs: runs.len(),
        auc_mean,
        auc_std,
        accuracy: mean(runs.iter().map(|r| r.metrics.accuracy)),
        precision: mean(runs.iter().map(|r| r.metrics.precision)),
        recall: mean(runs.iter().map(|r| r.metrics.recall)),
        f1: mean(runs.iter().map(|r| r.metrics.f1)),
        privacy_guarantee,
        bytes_mean: mean(runs.iter().map(|r| r.bytes as f64)),
    }
}

fn format_epsilon(eps: f64) -> String {
    if eps.is_finite() {
        format!("{eps:.4}")
    } else {
        "inf".into()
    }
}

/// Runs every configured seed and fold. The baseline toggles are applied
/// before anything else.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let cfg = cfg.for_baseline(cfg.baseline);
    cfg.validate()?;
    let mut runs = Vec::new();
    let mut rows = Vec::new();
    let mut ledgers = Vec::new();
    for &seed in &cfg.seeds {
        for prepared in prepare_seed(&cfg, seed)? {
            let fold = prepared.data.fold;
            let (run, ledger) = run_fold(&cfg, seed, prepared, &mut rows)?;
            runs.push(run);
            ledgers.push((seed, fold, ledger));
        }
    }
    let summary = summarize(&cfg, &runs);
    Ok(ExperimentOutput { report: ExperimentReport { baseline: cfg.baseline, config: cfg, summary, runs }, rounds: rows, ledgers })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Per-round log as CSV text.
pub fn rounds_csv(rows: &[RoundRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "seed",
        "fold",
        "round",
        "mode",
        "status",
        "train_loss",
        "node_val_auc",
        "test_auc",
        "epsilon",
        "bytes",
        "ledger_hash",
    ])
    .map_err(csv_error)?;
    for r in rows {
        let nodes: Vec<String> = r.node_val_auc.iter().map(|v| opt(*v)).collect();
        w.write_record([
            r.seed.to_string(),
            r.fold.to_string(),
            r.round.to_string(),
            r.mode.to_string(),
            r.status.clone(),
            opt(r.train_loss),
            nodes.join(";"),
            opt(r.test_auc),
            opt(r.epsilon),
            r.bytes.to_string(),
            r.ledger_hash.clone(),
        ])
        .map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Writes `rounds.csv`, `report.json` and one ledger per run into `dir`.
pub fn write_artifacts(output: &ExperimentOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("rounds.csv"), rounds_csv(&output.rounds)?)?;
    let json = serde_json::to_string_pretty(&output.report).map_err(|e| Error::Io(e.into()))?;
    std::fs::write(dir.join("report.json"), json + "\n")?;
    for (seed, fold, ledger) in &output.ledgers {
        ledger.save(&dir.join(format!("ledger_seed{seed}_fold{fold}.jsonl")))?;
    }
    Ok(())
}

/// Runs all five baselines on the same cohorts and splits.
pub fn run_comparison(cfg: &ExperimentConfig) -> Result<Vec<ExperimentOutput>> {
    Baseline::ALL.iter().map(|&b| run_experiment(&cfg.for_baseline(b))).collect()
}

/// Outcome of the configured baseline at one hospital count.
#[derive(Clone, Debug, Serialize)]
pub struct ScalingPoint {
    pub nodes: usize,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub bytes_mean: f64,
    pub epsilon: Option<f64>,
}

/// Reruns the configured baseline once per entry of `scaling_nodes`.
pub fn run_scaling(cfg: &ExperimentConfig) -> Result<Vec<ScalingPoint>> {
    cfg.scaling_nodes
        .iter()
        .map(|&nodes| {
            let mut c = cfg.clone();
            c.partition.nodes = nodes;
            let out = run_experiment(&c)?;
            let s = &out.report.summary;
            Ok(ScalingPoint {
                nodes,
                auc_mean: s.auc_mean,
                auc_std: s.auc_std,
                bytes_mean: s.bytes_mean,
                epsilon: out.report.runs.first().and_then(|r| r.epsilon),
            })
        })
        .collect()
}

pub fn scaling_csv(points: &[ScalingPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["nodes", "auc_mean", "auc_std", "bytes_mean", "epsilon"]).map_err(csv_error)?;
    for p in points {
        w.write_record([
            p.nodes.to_string(),
            p.auc_mean.to_string(),
            p.auc_std.to_string(),
            p.bytes_mean.to_string(),
            opt(p.epsilon),
        ])
        .map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// One summary row per baseline.
pub fn comparison_csv(outputs: &[ExperimentOutput]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["baseline", "runs", "auc_mean", "auc_std", "accuracy", "precision", "recall", "f1", "privacy", "bytes_mean"])
        .map_err(csv_error)?;
    for o in outputs {
        let s = &o.report.summary;
        w.write_record([
            o.report.baseline.name().to_string(),
            s.runs.to_string(),
            s.auc_mean.to_string(),
            s.auc_std.to_string(),
            s.accuracy.to_string(),
            s.precision.to_string(),
            s.recall.to_string(),
            s.f1.to_string(),
            s.privacy_guarantee.clone(),
            s.bytes_mean.to_string(),
        ])
        .map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes each baseline into its own subdirectory plus `comparison.csv`.
pub fn write_comparison(outputs: &[ExperimentOutput], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for o in outputs {
        write_artifacts(o, &dir.join(o.report.baseline.name()))?;
    }
    std::fs::write(dir.join("comparison.csv"), comparison_csv(outputs)?)?;
    Ok(())
}

/// Human-readable comparison table.
pub fn comparison_table(outputs: &[ExperimentOutput]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<12} {:>7} {:>7} {:>7} {:>7} {:>7}  privacy", "baseline", "auc", "acc", "f1", "prec", "recall");
    for o in outputs {
        let s = &o.report.summary;
        let _ = writeln!(
            out,
            "{:<12} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4}  {}",
            o.report.baseline.name(),
            s.auc_mean,
            s.accuracy,
            s.f1,
            s.precision,
            s.recall,
            s.privacy_guarantee
        );
    }
    out
}
