//! Non-IID assignment of patients to simulated hospitals.
//!
//! Each class is spread over the nodes according to its own Dirichlet draw,
//! so label mix varies by node, and every node applies a fixed per-channel
//! offset and scale to raw measurements to mimic equipment and case-mix
//! differences.

use serde::{Deserialize, Serialize};

use super::ontology::ChannelSpec;
use super::window::EpisodeWindow;
use crate::error::{Error, Result};
use crate::numcore::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionSpec {
    pub nodes: usize,
    /// Dirichlet concentration of the per-class node proportions.
    pub dirichlet_alpha: f64,
    /// Standard deviation of the per-node offset, in channel SDs.
    pub offset_scale: f64,
    /// Standard deviation of the per-node log scale factor.
    pub log_scale_spread: f64,
}

impl Default for PartitionSpec {
    fn default() -> Self {
        Self { nodes: 5, dirichlet_alpha: 1.0, offset_scale: 0.3, log_scale_spread: 0.1 }
    }
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nodes == 0 {
            return Err(Error::Config("partition needs at least one node".into()));
        }
        if !(self.dirichlet_alpha > 0.0 && self.dirichlet_alpha.is_finite()) {
            return Err(Error::Config(format!("dirichlet_alpha must be positive, got {}", self.dirichlet_alpha)));
        }
        if !(self.offset_scale >= 0.0 && self.log_scale_spread >= 0.0) {
            return Err(Error::Config("feature-shift magnitudes must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Per-node raw-unit transform `x ↦ mean + scale·(x − mean) + offset`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureShift {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl FeatureShift {
    pub fn identity(channels: usize) -> Self {
        Self { offset: vec![0.0; channels], scale: vec![1.0; channels] }
    }

    pub fn apply(&self, window: &EpisodeWindow, channels: &[ChannelSpec]) -> EpisodeWindow {
        let mut out = window.clone();
        for t in 0..out.len() {
            for (c, v) in out.values.row_mut(t).iter_mut().enumerate() {
                if v.is_finite() {
                    *v = channels[c].mean + self.scale[c] * (*v - channels[c].mean) + self.offset[c];
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    /// Cohort indices per node, ascending.
    pub members: Vec<Vec<usize>>,
    pub shifts: Vec<FeatureShift>,
}

impl Partition {
    /// Node of every cohort index.
    pub fn node_of(&self, n: usize) -> Vec<usize> {
        let mut out = vec![usize::MAX; n];
        for (k, m) in self.members.iter().enumerate() {
            for &i in m {
                out[i] = k;
            }
        }
        out
    }
}

/// Splits `count` items by `weights` with largest-remainder rounding.
fn apportion(count: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / total * count as f64).collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let assigned: usize = out.iter().sum();
    for &k in order.iter().take(count - assigned) {
        out[k] += 1;
    }
    out
}

pub fn partition_noniid(
    windows: &[EpisodeWindow],
    spec: &PartitionSpec,
    channels: &[ChannelSpec],
    rng: &mut Rng,
) -> Result<Partition> {
    spec.validate()?;
    let k = spec.nodes;
    if k > windows.len() {
        return Err(Error::Config(format!("{k} nodes for {} patients", windows.len())));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..windows.len()).filter(|&i| windows[i].label == class).collect();
        rng.shuffle(&mut idx);
        let props = if k == 1 { vec![1.0] } else { rng.dirichlet(spec.dirichlet_alpha, k) };
        let counts = apportion(idx.len(), &props);
        let mut start = 0;
        for (node, c) in counts.into_iter().enumerate() {
            members[node].extend_from_slice(&idx[start..start + c]);
            start += c;
        }
    }
    while let Some(empty) = members.iter().position(|m| m.is_empty()) {
        let donor = (0..k).max_by_key(|&j| (members[j].len(), std::cmp::Reverse(j))).expect("k ≥ 1");
        let moved = members[donor].pop().expect("donor has patients");
        log::warn!("node {empty} received no patients; moved one from node {donor}");
        members[empty].push(moved);
    }
    for m in &mut members {
        m.sort_unstable();
    }
    let f = windows.first().map_or(channels.len(), |w| w.feature_count());
    let shifts = (0..k)
        .map(|node| {
            if k == 1 {
                return FeatureShift::identity(f);
            }
            let mut node_rng = rng.derive(&[node as u64]);
            FeatureShift {
                offset: (0..f).map(|c| spec.offset_scale * channels[c].sd * node_rng.normal()).collect(),
                scale: (0..f).map(|_| (spec.log_scale_spread * node_rng.normal()).exp()).collect(),
            }
        })
        .collect();
    Ok(Partition { members, shifts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::cohort::{generate_cohort, CohortConfig};
    use crate::synthdata::ontology::Ontology;

    fn cohort(n: usize) -> (Vec<EpisodeWindow>, Ontology) {
        let o = Ontology::builtin();
        let c = generate_cohort(&CohortConfig { n_patients: n.max(500), seed: 11, ..CohortConfig::default() }, &o).unwrap();
        (c.windows[..n].to_vec(), o)
    }

    fn node_prevalence(w: &[EpisodeWindow], m: &[usize]) -> f64 {
        m.iter().map(|&i| f64::from(w[i].label)).sum::<f64>() / m.len() as f64
    }

    #[test]
    fn single_node_holds_everything_unshifted() {
        let (w, o) = cohort(200);
        let p = partition_noniid(&w, &PartitionSpec { nodes: 1, ..PartitionSpec::default() }, &o.channels, &mut Rng::new(1))
            .unwrap();
        assert_eq!(p.members[0], (0..200).collect::<Vec<_>>());
        assert_eq!(p.shifts[0], FeatureShift::identity(7));
    }

    #[test]
    fn partition_is_disjoint_cover() {
        let (w, o) = cohort(500);
        for seed in 0..5 {
            let spec = PartitionSpec { nodes: 7, dirichlet_alpha: 0.3, ..PartitionSpec::default() };
            let p = partition_noniid(&w, &spec, &o.channels, &mut Rng::new(seed)).unwrap();
            let mut all: Vec<u64> = p.members.iter().flatten().map(|&i| w[i].patient_id).collect();
            assert_eq!(all.len(), 500);
            all.sort_unstable();
            all.dedup();
            assert_eq!(all.len(), 500);
            assert!(p.members.iter().all(|m| !m.is_empty()));
        }
    }

    #[test]
    fn concentration_controls_label_skew() {
        let (w, o) = cohort(5000);
        let global = node_prevalence(&w, &(0..5000).collect::<Vec<_>>());
        for seed in 0..5 {
            let iid = PartitionSpec { nodes: 5, dirichlet_alpha: 1000.0, ..PartitionSpec::default() };
            let p = partition_noniid(&w, &iid, &o.channels, &mut Rng::new(seed)).unwrap();
            for m in &p.members {
                assert!((node_prevalence(&w, m) - global).abs() <= 0.03);
            }
            let skewed = PartitionSpec { nodes: 5, dirichlet_alpha: 0.1, ..PartitionSpec::default() };
            let p = partition_noniid(&w, &skewed, &o.channels, &mut Rng::new(seed)).unwrap();
            assert!(p.members.iter().any(|m| (node_prevalence(&w, m) - global).abs() > 0.1));
        }
    }

    #[test]
    fn empty_nodes_are_filled() {
        let (w, o) = cohort(30);
        let spec = PartitionSpec { nodes: 20, dirichlet_alpha: 0.01, ..PartitionSpec::default() };
        let p = partition_noniid(&w, &spec, &o.channels, &mut Rng::new(3)).unwrap();
        assert!(p.members.iter().all(|m| !m.is_empty()));
        assert_eq!(p.members.iter().map(Vec::len).sum::<usize>(), 30);
        let too_many = PartitionSpec { nodes: 31, ..PartitionSpec::default() };
        assert!(partition_noniid(&w, &too_many, &o.channels, &mut Rng::new(3)).is_err());
    }

    #[test]
    fn shift_changes_only_measured_values() {
        let (w, o) = cohort(20);
        let shift = FeatureShift { offset: vec![1.0; 7], scale: vec![2.0; 7] };
        let out = shift.apply(&w[0], &o.channels);
        for t in 0..w[0].len() {
            for c in 0..7 {
                let v = w[0].values.get(t, c);
                let s = out.values.get(t, c);
                if v.is_finite() {
                    assert!((s - (o.channels[c].mean + 2.0 * (v - o.channels[c].mean) + 1.0)).abs() < 1e-9);
                } else {
                    assert!(s.is_nan());
                }
            }
        }
    }

    #[test]
    fn apportion_sums_exactly() {
        assert_eq!(apportion(10, &[1.0, 1.0, 1.0]).iter().sum::<usize>(), 10);
        assert_eq!(apportion(7, &[0.5, 0.5]), vec![4, 3]);
    }
}
