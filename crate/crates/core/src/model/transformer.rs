//! Temporal transformer over an irregularly sampled window.
//!
//! Each step's input is the projection of `[values ‖ observed-mask]` plus a
//! learned linear map of sinusoidal features of the gap since the previous
//! observation (Δt) and of the time elapsed since the first observation
//! (the running sum of Δt). Blocks are post-norm: multi-head self-attention
//! then a leaky-rectified feed-forward layer, each wrapped in a residual
//! connection and layer normalization. The sequence is mean-pooled over
//! steps that carry at least one measurement.

use super::config::ModelConfig;
use super::params::Seg;
use crate::error::{Error, Result};
use crate::numcore::ops::{
    self, add_into_cols, layer_norm, layer_norm_backward, leaky_relu, leaky_relu_backward, linear, linear_backward,
    matmul, matmul_nt, matmul_tn, slice_cols, softmax_rows, softmax_rows_backward, LayerNormCache, FFN_LEAKY_SLOPE,
};
use crate::numcore::{Rng, Tensor};
use crate::synthdata::{window::check_timestamps, EpisodeWindow};

/// Base of the geometric frequency ladder, in hours.
pub const TIME_SCALE_BASE: f64 = 100.0;

#[derive(Clone, Copy, Debug)]
pub(crate) struct BlockSegs {
    pub wq: Seg,
    pub bq: Seg,
    pub wk: Seg,
    pub bk: Seg,
    pub wv: Seg,
    pub bv: Seg,
    pub wo: Seg,
    pub bo: Seg,
    pub ln1_gain: Seg,
    pub ln1_bias: Seg,
    pub w1: Seg,
    pub b1: Seg,
    pub w2: Seg,
    pub b2: Seg,
    pub ln2_gain: Seg,
    pub ln2_bias: Seg,
}

#[derive(Clone, Debug)]
pub(crate) struct TransformerSegs {
    pub input_w: Seg,
    pub input_b: Seg,
    pub time_w: Seg,
    pub time_b: Seg,
    pub blocks: Vec<BlockSegs>,
}

/// Sinusoidal features `[sin(ω Δt), cos(ω Δt), sin(ω τ), cos(ω τ)]` per step,
/// with `Δt_0 = 0` and `τ_t = t_t − t_0`.
pub fn time_features(times: &[f64], frequencies: usize) -> Result<Tensor> {
    check_timestamps(times)?;
    let omegas: Vec<f64> =
        (0..frequencies).map(|j| TIME_SCALE_BASE.powf(-(j as f64) / frequencies as f64)).collect();
    let width = 4 * frequencies;
    let mut data = Vec::with_capacity(times.len() * width);
    for (t, &time) in times.iter().enumerate() {
        let dt = if t == 0 { 0.0 } else { time - times[t - 1] };
        let elapsed = time - times[0];
        for signal in [dt, elapsed] {
            data.extend(omegas.iter().map(|w| (w * signal).sin()));
            data.extend(omegas.iter().map(|w| (w * signal).cos()));
        }
    }
    Ok(Tensor::from_parts(vec![times.len(), width], data))
}

/// `[values ‖ mask]` per step.
pub(crate) fn step_inputs(window: &EpisodeWindow) -> Result<Tensor> {
    if window.is_empty() {
        return Err(Error::Input(format!("patient {}: empty observation sequence", window.patient_id)));
    }
    if !window.values.is_finite() {
        return Err(Error::Input(format!("patient {}: window has not been preprocessed", window.patient_id)));
    }
    let f = window.feature_count();
    let mut data = Vec::with_capacity(window.len() * 2 * f);
    for t in 0..window.len() {
        data.extend_from_slice(window.values.row(t));
        data.extend((0..f).map(|c| if window.observed(t, c) { 1.0 } else { 0.0 }));
    }
    Ok(Tensor::from_parts(vec![window.len(), 2 * f], data))
}

/// Inverted-dropout mask: entries are 0 or `1/(1−p)`.
fn dropout_mask(len: usize, rate: f64, rng: &mut Option<&mut Rng>) -> Option<Vec<f64>> {
    let rng = rng.as_deref_mut()?;
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    Some((0..len).map(|_| if rng.bernoulli(rate) { 0.0 } else { keep }).collect())
}

fn apply_mask(x: &Tensor, mask: &Option<Vec<f64>>) -> Tensor {
    match mask {
        None => x.clone(),
        Some(m) => Tensor::from_parts(x.shape().to_vec(), x.data().iter().zip(m).map(|(v, k)| v * k).collect()),
    }
}

#[derive(Clone, Debug)]
struct BlockCache {
    x: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    /// Post-softmax attention per head, before dropout.
    attn: Vec<Tensor>,
    attn_masks: Vec<Option<Vec<f64>>>,
    concat: Tensor,
    ln1: LayerNormCache,
    y1: Tensor,
    ff_pre: Tensor,
    ff_act: Tensor,
    ff_mask: Option<Vec<f64>>,
    ln2: LayerNormCache,
}

#[derive(Clone, Debug)]
pub struct TransformerCache {
    inputs: Tensor,
    time: Tensor,
    blocks: Vec<BlockCache>,
    pool_steps: Vec<usize>,
    width: usize,
}

impl TransformerCache {
    /// Attention matrices `[layer][head]`, each `T × T`.
    pub fn attention(&self) -> Vec<Vec<Tensor>> {
        self.blocks.iter().map(|b| b.attn.clone()).collect()
    }
}

fn block_forward(
    cfg: &ModelConfig,
    s: &BlockSegs,
    p: &[f64],
    x: Tensor,
    rng: &mut Option<&mut Rng>,
) -> (Tensor, BlockCache) {
    let d = cfg.d_model;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let q = linear(&x, s.wq.of(p), Some(s.bq.of(p)), d);
    let k = linear(&x, s.wk.of(p), Some(s.bk.of(p)), d);
    let v = linear(&x, s.wv.of(p), Some(s.bv.of(p)), d);
    let steps = x.rows();
    let mut concat = Tensor::zeros(&[steps, d]);
    let mut attn = Vec::with_capacity(cfg.n_heads);
    let mut attn_masks = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let (qh, kh, vh) = (slice_cols(&q, h * dh, dh), slice_cols(&k, h * dh, dh), slice_cols(&v, h * dh, dh));
        let mut scores = matmul_nt(&qh, &kh);
        scores.scale_in_place(scale);
        let a = softmax_rows(&scores);
        let mask = dropout_mask(a.len(), cfg.dropout_rate, rng);
        let out = matmul(&apply_mask(&a, &mask), &vh);
        add_into_cols(&mut concat, &out, h * dh);
        attn.push(a);
        attn_masks.push(mask);
    }
    let att_out = linear(&concat, s.wo.of(p), Some(s.bo.of(p)), d);
    let (y1, ln1) = layer_norm(&ops::add(&x, &att_out), s.ln1_gain.of(p), s.ln1_bias.of(p));
    let ff_pre = linear(&y1, s.w1.of(p), Some(s.b1.of(p)), cfg.d_ff);
    let ff_act = leaky_relu(&ff_pre, FFN_LEAKY_SLOPE);
    let ff_out = linear(&ff_act, s.w2.of(p), Some(s.b2.of(p)), d);
    let ff_mask = dropout_mask(ff_out.len(), cfg.dropout_rate, rng);
    let (y2, ln2) = layer_norm(&ops::add(&y1, &apply_mask(&ff_out, &ff_mask)), s.ln2_gain.of(p), s.ln2_bias.of(p));
    let cache = BlockCache { x, q, k, v, attn, attn_masks, concat, ln1, y1, ff_pre, ff_act, ff_mask, ln2 };
    (y2, cache)
}

fn block_backward(cfg: &ModelConfig, s: &BlockSegs, p: &[f64], c: &BlockCache, dy: &Tensor, g: &mut [f64]) -> Tensor {
    let d = cfg.d_model;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let (dsum2, dg2, db2) = layer_norm_backward(&c.ln2, s.ln2_gain.of(p), dy);
    accumulate(s.ln2_gain.of_mut(g), &dg2);
    accumulate(s.ln2_bias.of_mut(g), &db2);
    let mut dy1 = dsum2.clone();
    let dff_out = apply_mask(&dsum2, &c.ff_mask);
    let dff_act = linear_grad(&c.ff_act, s.w2, Some(s.b2), p, &dff_out, g);
    let dff_pre = leaky_relu_backward(&c.ff_pre, &dff_act, FFN_LEAKY_SLOPE);
    dy1.add_assign(&linear_grad(&c.y1, s.w1, Some(s.b1), p, &dff_pre, g));
    let (dsum1, dg1, db1) = layer_norm_backward(&c.ln1, s.ln1_gain.of(p), &dy1);
    accumulate(s.ln1_gain.of_mut(g), &dg1);
    accumulate(s.ln1_bias.of_mut(g), &db1);
    let mut dx = dsum1.clone();
    let dconcat = linear_grad(&c.concat, s.wo, Some(s.bo), p, &dsum1, g);

    let steps = c.x.rows();
    let mut dq = Tensor::zeros(&[steps, d]);
    let mut dk = Tensor::zeros(&[steps, d]);
    let mut dv = Tensor::zeros(&[steps, d]);
    for h in 0..cfg.n_heads {
        let (qh, kh, vh) = (slice_cols(&c.q, h * dh, dh), slice_cols(&c.k, h * dh, dh), slice_cols(&c.v, h * dh, dh));
        let dout = slice_cols(&dconcat, h * dh, dh);
        let a_drop = apply_mask(&c.attn[h], &c.attn_masks[h]);
        let da_drop = matmul_nt(&dout, &vh);
        add_into_cols(&mut dv, &matmul_tn(&a_drop, &dout), h * dh);
        let da = apply_mask(&da_drop, &c.attn_masks[h]);
        let mut dscores = softmax_rows_backward(&c.attn[h], &da);
        dscores.scale_in_place(scale);
        add_into_cols(&mut dq, &matmul(&dscores, &kh), h * dh);
        add_into_cols(&mut dk, &matmul_tn(&dscores, &qh), h * dh);
    }
    for (dproj, w, b) in [(&dq, s.wq, s.bq), (&dk, s.wk, s.bk), (&dv, s.wv, s.bv)] {
        dx.add_assign(&linear_grad(&c.x, w, Some(b), p, dproj, g));
    }
    dx
}

/// Backward of an affine layer whose weight and bias live in `g` at `w`/`b`;
/// returns the input gradient.
pub(crate) fn linear_grad(x: &Tensor, w: Seg, b: Option<Seg>, p: &[f64], dy: &Tensor, g: &mut [f64]) -> Tensor {
    linear_grad_opt(x, w, b, p, dy, g, true).expect("dx requested")
}

pub(crate) fn linear_grad_opt(
    x: &Tensor,
    w: Seg,
    b: Option<Seg>,
    p: &[f64],
    dy: &Tensor,
    g: &mut [f64],
    need_dx: bool,
) -> Option<Tensor> {
    let mut db = b.map(|b| vec![0.0; b.len()]);
    let dx = linear_backward(x, w.of(p), dy, w.of_mut(g), db.as_deref_mut(), need_dx);
    if let (Some(b), Some(db)) = (b, db) {
        accumulate(b.of_mut(g), &db);
    }
    dx
}

pub(crate) fn accumulate(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Learned map of the time features: `T × d_model`.
pub(crate) fn temporal_encoding(cfg: &ModelConfig, segs: &TransformerSegs, p: &[f64], times: &[f64]) -> Result<(Tensor, Tensor)> {
    let feats = time_features(times, cfg.time_frequencies)?;
    let enc = linear(&feats, segs.time_w.of(p), Some(segs.time_b.of(p)), cfg.d_model);
    Ok((enc, feats))
}

pub(crate) fn transformer_forward(
    cfg: &ModelConfig,
    segs: &TransformerSegs,
    p: &[f64],
    window: &EpisodeWindow,
    mut rng: Option<&mut Rng>,
) -> Result<(Vec<f64>, TransformerCache)> {
    let inputs = step_inputs(window)?;
    let (enc, time) = temporal_encoding(cfg, segs, p, &window.timestamps)?;
    let mut x = linear(&inputs, segs.input_w.of(p), Some(segs.input_b.of(p)), cfg.d_model);
    x.add_assign(&enc);
    let mut blocks = Vec::with_capacity(segs.blocks.len());
    for s in &segs.blocks {
        let (y, cache) = block_forward(cfg, s, p, x, &mut rng);
        blocks.push(cache);
        x = y;
    }
    let mut pool_steps: Vec<usize> = (0..window.len()).filter(|&t| window.step_observed(t)).collect();
    if pool_steps.is_empty() {
        pool_steps = (0..window.len()).collect();
    }
    let inv = 1.0 / pool_steps.len() as f64;
    let mut h_ts = vec![0.0; cfg.d_model];
    for &t in &pool_steps {
        for (o, v) in h_ts.iter_mut().zip(x.row(t)) {
            *o += inv * v;
        }
    }
    Ok((h_ts, TransformerCache { inputs, time, blocks, pool_steps, width: cfg.d_model }))
}

pub(crate) fn transformer_backward(
    cfg: &ModelConfig,
    segs: &TransformerSegs,
    p: &[f64],
    cache: &TransformerCache,
    dh_ts: &[f64],
    g: &mut [f64],
) {
    let steps = cache.inputs.rows();
    let mut dx = Tensor::zeros(&[steps, cache.width]);
    let inv = 1.0 / cache.pool_steps.len() as f64;
    for &t in &cache.pool_steps {
        for (d, v) in dx.row_mut(t).iter_mut().zip(dh_ts) {
            *d += inv * v;
        }
    }
    for (s, c) in segs.blocks.iter().zip(&cache.blocks).rev() {
        dx = block_backward(cfg, s, p, c, &dx, g);
    }
    linear_grad_opt(&cache.inputs, segs.input_w, Some(segs.input_b), p, &dx, g, false);
    linear_grad_opt(&cache.time, segs.time_w, Some(segs.time_b), p, &dx, g, false);
}
