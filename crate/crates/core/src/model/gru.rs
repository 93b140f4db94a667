//! Single-layer gated recurrent encoder used by the recurrent baselines.
//! It sees `[values ‖ mask]` per step and no timing information; the final
//! hidden state is the sequence vector.
//!
//! ```text
//! z = σ(x Wxz + h Whz + bz)
//! r = σ(x Wxr + h Whr + br)
//! n = tanh(x Wxn + (r ⊙ h) Whn + bn)
//! h' = (1 − z) ⊙ n + z ⊙ h
//! ```

use super::config::ModelConfig;
use super::params::Seg;
use super::transformer::{linear_grad_opt, step_inputs};
use crate::error::Result;
use crate::numcore::ops::{dot, linear, sigmoid_scalar};
use crate::numcore::Tensor;
use crate::synthdata::EpisodeWindow;

#[derive(Clone, Copy, Debug)]
pub(crate) struct GruSegs {
    pub wxz: Seg,
    pub whz: Seg,
    pub bz: Seg,
    pub wxr: Seg,
    pub whr: Seg,
    pub br: Seg,
    pub wxn: Seg,
    pub whn: Seg,
    pub bn: Seg,
}

#[derive(Clone, Debug)]
pub struct GruCache {
    inputs: Tensor,
    /// `h_0 … h_T`, `(T+1) × d`.
    hidden: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    n: Vec<Vec<f64>>,
}

/// `v · W` for a row vector `v[k]` and `W[k × n]`.
fn row_times(v: &[f64], w: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (p, &a) in v.iter().enumerate() {
        for (o, b) in out.iter_mut().zip(&w[p * n..(p + 1) * n]) {
            *o += a * b;
        }
    }
    out
}

/// Accumulates the outer product `u vᵀ` into `w`.
fn add_outer(w: &mut [f64], u: &[f64], v: &[f64]) {
    let n = v.len();
    for (p, &a) in u.iter().enumerate() {
        for (o, b) in w[p * n..(p + 1) * n].iter_mut().zip(v) {
            *o += a * b;
        }
    }
}

/// `W · v` for `W[k × n]`, `v[n]`, i.e. the backward of `row_times`.
fn times_col(w: &[f64], v: &[f64], k: usize) -> Vec<f64> {
    let n = v.len();
    (0..k).map(|p| dot(&w[p * n..(p + 1) * n], v)).collect()
}

pub(crate) fn gru_forward(cfg: &ModelConfig, s: &GruSegs, p: &[f64], window: &EpisodeWindow) -> Result<(Vec<f64>, GruCache)> {
    let d = cfg.d_model;
    let inputs = step_inputs(window)?;
    let xz = linear(&inputs, s.wxz.of(p), Some(s.bz.of(p)), d);
    let xr = linear(&inputs, s.wxr.of(p), Some(s.br.of(p)), d);
    let xn = linear(&inputs, s.wxn.of(p), Some(s.bn.of(p)), d);
    let steps = inputs.rows();
    let mut hidden = Vec::with_capacity(steps + 1);
    hidden.push(vec![0.0; d]);
    let (mut zs, mut rs, mut ns) = (Vec::with_capacity(steps), Vec::with_capacity(steps), Vec::with_capacity(steps));
    for t in 0..steps {
        let h = &hidden[t];
        let hz = row_times(h, s.whz.of(p), d);
        let hr = row_times(h, s.whr.of(p), d);
        let z: Vec<f64> = (0..d).map(|i| sigmoid_scalar(xz.get(t, i) + hz[i])).collect();
        let r: Vec<f64> = (0..d).map(|i| sigmoid_scalar(xr.get(t, i) + hr[i])).collect();
        let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
        let hn = row_times(&rh, s.whn.of(p), d);
        let n: Vec<f64> = (0..d).map(|i| (xn.get(t, i) + hn[i]).tanh()).collect();
        let next: Vec<f64> = (0..d).map(|i| (1.0 - z[i]) * n[i] + z[i] * h[i]).collect();
        hidden.push(next);
        zs.push(z);
        rs.push(r);
        ns.push(n);
    }
    let h_ts = hidden[steps].clone();
    Ok((h_ts, GruCache { inputs, hidden, z: zs, r: rs, n: ns }))
}

pub(crate) fn gru_backward(cfg: &ModelConfig, s: &GruSegs, p: &[f64], c: &GruCache, dh_ts: &[f64], g: &mut [f64]) {
    let d = cfg.d_model;
    let steps = c.z.len();
    let mut dh = dh_ts.to_vec();
    let mut dpre_z = Tensor::zeros(&[steps, d]);
    let mut dpre_r = Tensor::zeros(&[steps, d]);
    let mut dpre_n = Tensor::zeros(&[steps, d]);
    for t in (0..steps).rev() {
        let h = &c.hidden[t];
        let (z, r, n) = (&c.z[t], &c.r[t], &c.n[t]);
        let mut dh_prev: Vec<f64> = (0..d).map(|i| dh[i] * z[i]).collect();
        let dn: Vec<f64> = (0..d).map(|i| dh[i] * (1.0 - z[i]) * (1.0 - n[i] * n[i])).collect();
        let dz: Vec<f64> = (0..d).map(|i| dh[i] * (h[i] - n[i]) * z[i] * (1.0 - z[i])).collect();
        // Candidate path through (r ⊙ h) Whn.
        let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
        add_outer(s.whn.of_mut(g), &rh, &dn);
        let drh = times_col(s.whn.of(p), &dn, d);
        let dr: Vec<f64> = (0..d).map(|i| drh[i] * h[i] * r[i] * (1.0 - r[i])).collect();
        for i in 0..d {
            dh_prev[i] += drh[i] * r[i];
        }
        add_outer(s.whz.of_mut(g), h, &dz);
        add_outer(s.whr.of_mut(g), h, &dr);
        for (acc, v) in dh_prev.iter_mut().zip(times_col(s.whz.of(p), &dz, d)) {
            *acc += v;
        }
        for (acc, v) in dh_prev.iter_mut().zip(times_col(s.whr.of(p), &dr, d)) {
            *acc += v;
        }
        dpre_z.row_mut(t).copy_from_slice(&dz);
        dpre_r.row_mut(t).copy_from_slice(&dr);
        dpre_n.row_mut(t).copy_from_slice(&dn);
        dh = dh_prev;
    }
    linear_grad_opt(&c.inputs, s.wxz, Some(s.bz), p, &dpre_z, g, false);
    linear_grad_opt(&c.inputs, s.wxr, Some(s.br), p, &dpre_r, g, false);
    linear_grad_opt(&c.inputs, s.wxn, Some(s.bn), p, &dpre_n, g, false);
}
