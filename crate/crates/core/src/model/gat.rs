//! Single-head graph attention over a patient subgraph.
//!
//! Node `i` aggregates `h'_i = Σ_{j ∈ {i} ∪ N(i)} α_ij W h_j`, where
//! `α_i·` is a softmax over `leaky(a_srcᵀ W h_i + a_dstᵀ W h_j)`. The graph
//! vector is the mean of `h'` over seed nodes (all nodes when no seed is
//! marked).

use super::params::Seg;
use crate::error::{Error, Result};
use crate::kgraph::{KgEmbeddings, PatientSubgraph};
use crate::numcore::ops::{self, dot, leaky_relu_scalar, linear, linear_backward};
use crate::numcore::Tensor;

pub const GAT_LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug)]
pub(crate) struct GatSegs {
    /// `kg_input_dim × d_kg` shared transform.
    pub w: Seg,
    /// `[a_src; a_dst]`, length `2·d_kg`.
    pub attn: Seg,
}

#[derive(Clone, Debug)]
struct NodeAttention {
    node: usize,
    /// `{i} ∪ N(i)`, self first.
    support: Vec<usize>,
    logits_pre: Vec<f64>,
    alpha: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct GatCache {
    h: Tensor,
    z: Tensor,
    pooled: Vec<NodeAttention>,
}

/// Attention weights and outputs for one node, for inspection.
#[derive(Clone, Debug)]
pub struct NodeView {
    pub support: Vec<usize>,
    pub alpha: Vec<f64>,
    pub output: Vec<f64>,
}

fn node_features(subgraph: &PatientSubgraph, emb: &KgEmbeddings) -> Tensor {
    let idx: Vec<usize> = subgraph.node_ids.iter().map(|e| e.0).collect();
    ops::gather_rows(&emb.entity_vecs, &idx)
}

fn attend(z: &Tensor, a: &[f64], node: usize, neighbors: &[usize]) -> NodeAttention {
    let d = z.cols();
    let (a_src, a_dst) = a.split_at(d);
    let mut support = Vec::with_capacity(neighbors.len() + 1);
    support.push(node);
    support.extend(neighbors.iter().copied().filter(|&j| j != node));
    let s = dot(z.row(node), a_src);
    let logits_pre: Vec<f64> = support.iter().map(|&j| s + dot(z.row(j), a_dst)).collect();
    let mut alpha: Vec<f64> = logits_pre.iter().map(|&u| leaky_relu_scalar(u, GAT_LEAKY_SLOPE)).collect();
    ops::softmax_in_place(&mut alpha);
    NodeAttention { node, support, logits_pre, alpha }
}

fn aggregate(z: &Tensor, att: &NodeAttention) -> Vec<f64> {
    let mut out = vec![0.0; z.cols()];
    for (&j, &a) in att.support.iter().zip(&att.alpha) {
        for (o, v) in out.iter_mut().zip(z.row(j)) {
            *o += a * v;
        }
    }
    out
}

pub(crate) fn gat_forward(
    segs: &GatSegs,
    params: &[f64],
    subgraph: &PatientSubgraph,
    emb: &KgEmbeddings,
) -> Result<(Vec<f64>, GatCache)> {
    if subgraph.is_empty() {
        return Err(Error::Input("graph encoder needs a nonempty subgraph".into()));
    }
    if emb.dim != segs.w.rows {
        return Err(Error::Config(format!("entity embeddings have width {}, encoder expects {}", emb.dim, segs.w.rows)));
    }
    let h = node_features(subgraph, emb);
    let z = linear(&h, segs.w.of(params), None, segs.w.cols);
    let neighbors = subgraph.neighbors();
    let mut pooled_nodes: Vec<usize> = (0..subgraph.len()).filter(|&i| subgraph.seed_mask[i]).collect();
    if pooled_nodes.is_empty() {
        pooled_nodes = (0..subgraph.len()).collect();
    }
    let a = segs.attn.of(params);
    let pooled: Vec<NodeAttention> = pooled_nodes.iter().map(|&i| attend(&z, a, i, &neighbors[i])).collect();
    let mut h_kg = vec![0.0; z.cols()];
    let inv = 1.0 / pooled.len() as f64;
    for att in &pooled {
        for (o, v) in h_kg.iter_mut().zip(aggregate(&z, att)) {
            *o += inv * v;
        }
    }
    Ok((h_kg, GatCache { h, z, pooled }))
}

pub(crate) fn gat_backward(segs: &GatSegs, params: &[f64], cache: &GatCache, dh_kg: &[f64], grad: &mut [f64]) {
    let z = &cache.z;
    let d = z.cols();
    let a = segs.attn.of(params);
    let (a_src, a_dst) = a.split_at(d);
    let mut dz = Tensor::zeros(&[z.rows(), d]);
    let mut da = vec![0.0; 2 * d];
    let inv = 1.0 / cache.pooled.len() as f64;
    let dout: Vec<f64> = dh_kg.iter().map(|g| g * inv).collect();
    for att in &cache.pooled {
        // out_i = Σ α_ij z_j
        let dalpha: Vec<f64> = att.support.iter().map(|&j| dot(&dout, z.row(j))).collect();
        for (&j, &al) in att.support.iter().zip(&att.alpha) {
            for (g, o) in dz.row_mut(j).iter_mut().zip(&dout) {
                *g += al * o;
            }
        }
        let inner = dot(&att.alpha, &dalpha);
        let mut ds = 0.0;
        for (k, &j) in att.support.iter().enumerate() {
            let de = att.alpha[k] * (dalpha[k] - inner);
            let du = if att.logits_pre[k] > 0.0 { de } else { GAT_LEAKY_SLOPE * de };
            ds += du;
            // logit = a_srcᵀ z_i + a_dstᵀ z_j
            for (c, g) in dz.row_mut(j).iter_mut().enumerate() {
                *g += du * a_dst[c];
            }
            for (c, dv) in da[d..].iter_mut().enumerate() {
                *dv += du * z.get(j, c);
            }
        }
        let i = att.node;
        for (c, g) in dz.row_mut(i).iter_mut().enumerate() {
            *g += ds * a_src[c];
        }
        for (c, dv) in da[..d].iter_mut().enumerate() {
            *dv += ds * z.get(i, c);
        }
    }
    for (g, v) in segs.attn.of_mut(grad).iter_mut().zip(&da) {
        *g += v;
    }
    linear_backward(&cache.h, segs.w.of(params), &dz, segs.w.of_mut(grad), None, false);
}

/// Attention and output of every node, for inspection and tests.
pub(crate) fn gat_all_nodes(
    segs: &GatSegs,
    params: &[f64],
    subgraph: &PatientSubgraph,
    emb: &KgEmbeddings,
) -> Vec<NodeView> {
    let h = node_features(subgraph, emb);
    let z = linear(&h, segs.w.of(params), None, segs.w.cols);
    let neighbors = subgraph.neighbors();
    let a = segs.attn.of(params);
    (0..subgraph.len())
        .map(|i| {
            let att = attend(&z, a, i, &neighbors[i]);
            let output = aggregate(&z, &att);
            NodeView { support: att.support, alpha: att.alpha, output }
        })
        .collect()
}
