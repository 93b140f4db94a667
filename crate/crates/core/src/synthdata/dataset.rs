//! Cross-validation folds and per-hospital train/validation/test samples.

use serde::{Deserialize, Serialize};

use super::ontology::ChannelSpec;
use super::partition::Partition;
use super::preprocess::{fit_norm_stats, preprocess, NormStats};
use super::window::EpisodeWindow;
use super::Sample;
use crate::error::{Error, Result};
use crate::kgraph::{extract_subgraph, KgStore};
use crate::numcore::Rng;

/// Where normalization statistics come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormScope {
    /// Each hospital normalizes with its own training split.
    PerNode,
    /// All training data is pooled into a single node.
    Pooled,
}

#[derive(Clone, Debug)]
pub struct NodeData {
    pub node: usize,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub stats: NormStats,
}

#[derive(Clone, Debug)]
pub struct FoldData {
    pub fold: usize,
    pub nodes: Vec<NodeData>,
}

impl FoldData {
    pub fn test_samples(&self) -> Vec<&Sample> {
        self.nodes.iter().flat_map(|n| &n.test).collect()
    }

    pub fn train_len(&self) -> usize {
        self.nodes.iter().map(|n| n.train.len()).sum()
    }
}

/// Fold index of every patient, balanced by label.
pub fn assign_folds(windows: &[EpisodeWindow], folds: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if folds < 2 || folds > windows.len() {
        return Err(Error::Config(format!("need 2 ≤ folds ≤ {}, got {folds}", windows.len())));
    }
    let mut out = vec![0; windows.len()];
    let mut offset = 0;
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..windows.len()).filter(|&i| windows[i].label == class).collect();
        rng.shuffle(&mut idx);
        for (pos, &i) in idx.iter().enumerate() {
            out[i] = (pos + offset) % folds;
        }
        offset += idx.len();
    }
    Ok(out)
}

pub struct FoldSpec<'a> {
    pub channels: &'a [ChannelSpec],
    pub store: Option<&'a KgStore>,
    pub hops: usize,
    pub val_fraction: f64,
    pub scope: NormScope,
}

fn to_sample(raw: &EpisodeWindow, stats: &NormStats, spec: &FoldSpec<'_>) -> Result<Sample> {
    let window = preprocess(raw, stats)?;
    let subgraph = match spec.store {
        Some(store) => Some(extract_subgraph(store, &window.feature_entities, spec.hops)?),
        None => None,
    };
    Ok(Sample { window, subgraph })
}

/// Splits one hospital's non-test patients into train and validation.
fn local_split(mut local: Vec<usize>, val_fraction: f64, rng: &mut Rng) -> (Vec<usize>, Vec<usize>) {
    rng.shuffle(&mut local);
    let mut n_val = (val_fraction * local.len() as f64).round() as usize;
    if val_fraction > 0.0 && local.len() >= 2 {
        n_val = n_val.clamp(1, local.len() - 1);
    }
    let val = local.split_off(local.len() - n_val);
    (local, val)
}

/// Builds the samples of cross-validation fold `fold`: patients assigned to
/// it form the test set, every other patient is split 80/20 (by default)
/// within its hospital.
pub fn build_fold(
    windows: &[EpisodeWindow],
    partition: &Partition,
    folds: &[usize],
    fold: usize,
    spec: &FoldSpec<'_>,
    rng: &mut Rng,
) -> Result<FoldData> {
    if !(0.0..1.0).contains(&spec.val_fraction) {
        return Err(Error::Config(format!("validation fraction must lie in [0, 1), got {}", spec.val_fraction)));
    }
    struct Raw {
        train: Vec<EpisodeWindow>,
        val: Vec<EpisodeWindow>,
        test: Vec<EpisodeWindow>,
    }
    let mut raws = Vec::with_capacity(partition.members.len());
    for (k, members) in partition.members.iter().enumerate() {
        let shift = &partition.shifts[k];
        let shifted = |i: usize| shift.apply(&windows[i], spec.channels);
        let local: Vec<usize> = members.iter().copied().filter(|&i| folds[i] != fold).collect();
        let test = members.iter().copied().filter(|&i| folds[i] == fold).map(shifted).collect();
        let (train, val) = local_split(local, spec.val_fraction, &mut rng.derive(&[fold as u64, k as u64]));
        if train.is_empty() {
            return Err(Error::Input(format!("node {k} has no training patients in fold {fold}")));
        }
        raws.push(Raw { train: train.into_iter().map(shifted).collect(), val: val.into_iter().map(shifted).collect(), test });
    }
    if spec.scope == NormScope::Pooled {
        let mut pooled = Raw { train: Vec::new(), val: Vec::new(), test: Vec::new() };
        for r in raws {
            pooled.train.extend(r.train);
            pooled.val.extend(r.val);
            pooled.test.extend(r.test);
        }
        raws = vec![pooled];
    }
    let mut nodes = Vec::with_capacity(raws.len());
    for (k, r) in raws.into_iter().enumerate() {
        let refs: Vec<&EpisodeWindow> = r.train.iter().collect();
        let stats = fit_norm_stats(&refs)?;
        let convert = |ws: &[EpisodeWindow]| ws.iter().map(|w| to_sample(w, &stats, spec)).collect::<Result<Vec<_>>>();
        nodes.push(NodeData { node: k, train: convert(&r.train)?, val: convert(&r.val)?, test: convert(&r.test)?, stats: stats.clone() });
    }
    Ok(FoldData { fold, nodes })
}
