//! Dual-path sepsis predictor: a graph-attention encoding of the patient's
//! knowledge subgraph and a sequence encoding of the observation window,
//! concatenated and fed to a logistic head.

mod config;
mod gat;
mod gru;
mod params;
mod transformer;


use std::sync::Arc;

pub use config::{ModelConfig, TemporalEncoderKind};
pub use gat::{GatCache, NodeView, GAT_LEAKY_SLOPE};
pub use gru::GruCache;
pub use params::{ParamLayout, ParamVector, Seg, SegmentInfo};
pub use transformer::{time_features, TransformerCache, TIME_SCALE_BASE};

use crate::error::{Error, Result};
use crate::kgraph::{KgEmbeddings, PatientSubgraph};
use crate::numcore::ops::{dot, sigmoid_scalar};
use crate::numcore::{Rng, Tensor};
use crate::synthdata::{EpisodeWindow, Sample};
use gat::GatSegs;
use gru::GruSegs;
use transformer::{BlockSegs, TransformerSegs};

/// Smallest distance kept between a reported probability and 0 or 1.
const PROB_EPS: f64 = 1e-15;

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionOutput {
    /// Empty when the knowledge-graph path is disabled.
    pub h_kg: Vec<f64>,
    pub h_ts: Vec<f64>,
    /// `[h_kg ‖ h_ts]`.
    pub h_final: Vec<f64>,
    pub logit: f64,
    pub probability: f64,
}

/// Binary cross-entropy of a logit against a {0,1} label, computed stably.
pub fn bce_with_logit(logit: f64, label: u8) -> f64 {
    // softplus(x) − y·x
    let softplus = if logit > 0.0 { logit + (-logit).exp().ln_1p() } else { logit.exp().ln_1p() };
    softplus - f64::from(label) * logit
}

#[derive(Clone, Debug)]
enum SequenceSegs {
    Transformer(TransformerSegs),
    Gru(GruSegs),
}

#[derive(Clone, Debug)]
enum SequenceCache {
    Transformer(TransformerCache),
    Gru(GruCache),
}

/// Intermediate values of one forward pass, consumed by the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    gat: Option<GatCache>,
    sequence: SequenceCache,
    output: PredictionOutput,
}

impl ForwardCache {
    /// Attention matrices per layer and head; empty for the recurrent encoder.
    pub fn attention(&self) -> Vec<Vec<Tensor>> {
        match &self.sequence {
            SequenceCache::Transformer(c) => c.attention(),
            SequenceCache::Gru(_) => Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    Glorot,
    Zero,
    One,
}

/// The predictor's architecture and parameter layout. Parameters are held
/// separately in a [`ParamVector`] so every client and the server can share
/// one model description.
#[derive(Clone, Debug)]
pub struct SepsisModel {
    cfg: ModelConfig,
    layout: Arc<ParamLayout>,
    inits: Vec<(Seg, Init)>,
    gat: Option<GatSegs>,
    sequence: SequenceSegs,
    head_w: Seg,
    head_b: Seg,
    embeddings: Option<Arc<KgEmbeddings>>,
}

struct Builder {
    layout: ParamLayout,
    inits: Vec<(Seg, Init)>,
}

impl Builder {
    fn add(&mut self, name: &str, rows: usize, cols: usize, init: Init) -> Seg {
        let seg = self.layout.push(name, rows, cols);
        self.inits.push((seg, init));
        seg
    }
}

impl SepsisModel {
    /// `embeddings` are the frozen entity vectors used as graph-node
    /// features; required when the knowledge-graph path is enabled.
    pub fn new(cfg: ModelConfig, embeddings: Option<Arc<KgEmbeddings>>) -> Result<Self> {
        cfg.validate()?;
        if cfg.use_kg {
            match &embeddings {
                None => return Err(Error::Config("knowledge-graph path enabled without embeddings".into())),
                Some(e) if e.dim != cfg.kg_input_dim => {
                    return Err(Error::Config(format!(
                        "embeddings have width {}, config expects {}",
                        e.dim, cfg.kg_input_dim
                    )))
                }
                Some(_) => {}
            }
        }
        let mut b = Builder { layout: ParamLayout::new(), inits: Vec::new() };
        let gat = cfg.use_kg.then(|| GatSegs {
            w: b.add("gat.w", cfg.kg_input_dim, cfg.d_kg, Init::Glorot),
            attn: b.add("gat.attn", 2 * cfg.d_kg, 1, Init::Glorot),
        });
        let d = cfg.d_model;
        let inputs = 2 * cfg.feature_count;
        let sequence = match cfg.encoder {
            TemporalEncoderKind::Transformer => {
                let input_w = b.add("input.w", inputs, d, Init::Glorot);
                let input_b = b.add("input.b", 1, d, Init::Zero);
                let time_w = b.add("time.w", 4 * cfg.time_frequencies, d, Init::Glorot);
                let time_b = b.add("time.b", 1, d, Init::Zero);
                let blocks = (0..cfg.n_layers)
                    .map(|l| {
                        let mut n = |s: &str, r, c, i| b.add(&format!("block{l}.{s}"), r, c, i);
                        BlockSegs {
                            wq: n("wq", d, d, Init::Glorot),
                            bq: n("bq", 1, d, Init::Zero),
                            wk: n("wk", d, d, Init::Glorot),
                            bk: n("bk", 1, d, Init::Zero),
                            wv: n("wv", d, d, Init::Glorot),
                            bv: n("bv", 1, d, Init::Zero),
                            wo: n("wo", d, d, Init::Glorot),
                            bo: n("bo", 1, d, Init::Zero),
                            ln1_gain: n("ln1.gain", 1, d, Init::One),
                            ln1_bias: n("ln1.bias", 1, d, Init::Zero),
                            w1: n("ff.w1", d, cfg.d_ff, Init::Glorot),
                            b1: n("ff.b1", 1, cfg.d_ff, Init::Zero),
                            w2: n("ff.w2", cfg.d_ff, d, Init::Glorot),
                            b2: n("ff.b2", 1, d, Init::Zero),
                            ln2_gain: n("ln2.gain", 1, d, Init::One),
                            ln2_bias: n("ln2.bias", 1, d, Init::Zero),
                        }
                    })
                    .collect();
                SequenceSegs::Transformer(TransformerSegs { input_w, input_b, time_w, time_b, blocks })
            }
            TemporalEncoderKind::Gru => SequenceSegs::Gru(GruSegs {
                wxz: b.add("gru.wxz", inputs, d, Init::Glorot),
                whz: b.add("gru.whz", d, d, Init::Glorot),
                bz: b.add("gru.bz", 1, d, Init::Zero),
                wxr: b.add("gru.wxr", inputs, d, Init::Glorot),
                whr: b.add("gru.whr", d, d, Init::Glorot),
                br: b.add("gru.br", 1, d, Init::Zero),
                wxn: b.add("gru.wxn", inputs, d, Init::Glorot),
                whn: b.add("gru.whn", d, d, Init::Glorot),
                bn: b.add("gru.bn", 1, d, Init::Zero),
            }),
        };
        let head_w = b.add("head.w", cfg.fused_width(), 1, Init::Glorot);
        let head_b = b.add("head.b", 1, 1, Init::Zero);
        Ok(Self {
            cfg,
            layout: Arc::new(b.layout),
            inits: b.inits,
            gat,
            sequence,
            head_w,
            head_b,
            embeddings: if gat.is_some() { embeddings } else { None },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn embeddings(&self) -> Option<&KgEmbeddings> {
        self.embeddings.as_deref()
    }

    /// Glorot-uniform weights `±√(6/(fan_in+fan_out))`, zero biases, unit gains.
    pub fn init_params(&self, rng: &mut Rng) -> ParamVector {
        let mut p = ParamVector::zeros(self.layout.clone());
        let flat = p.as_mut_slice();
        for &(seg, init) in &self.inits {
            let dst = seg.of_mut(flat);
            match init {
                Init::Zero => {}
                Init::One => dst.fill(1.0),
                Init::Glorot => {
                    let bound = (6.0 / (seg.rows + seg.cols) as f64).sqrt();
                    dst.iter_mut().for_each(|v| *v = rng.uniform_range(-bound, bound));
                }
            }
        }
        p
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.layout().digest() != self.layout.digest() {
            return Err(Error::Config("parameter vector layout does not match the model".into()));
        }
        Ok(())
    }

    /// Graph vector `h_kg` using the model's frozen embeddings.
    pub fn gat_encode(&self, subgraph: &PatientSubgraph, params: &ParamVector) -> Result<Tensor> {
        let emb = self.embeddings.as_deref().ok_or_else(|| Error::Config("knowledge-graph path disabled".into()))?;
        self.gat_encode_with(subgraph, emb, params)
    }

    pub fn gat_encode_with(&self, subgraph: &PatientSubgraph, emb: &KgEmbeddings, params: &ParamVector) -> Result<Tensor> {
        self.check_params(params)?;
        let segs = self.gat.as_ref().ok_or_else(|| Error::Config("knowledge-graph path disabled".into()))?;
        let (h, _) = gat::gat_forward(segs, params.as_slice(), subgraph, emb)?;
        Ok(Tensor::vector(h))
    }

    /// Per-node attention coefficients and outputs of the graph encoder.
    pub fn gat_nodes(&self, subgraph: &PatientSubgraph, params: &ParamVector) -> Result<Vec<NodeView>> {
        let emb = self.embeddings.as_deref().ok_or_else(|| Error::Config("knowledge-graph path disabled".into()))?;
        let segs = self.gat.as_ref().ok_or_else(|| Error::Config("knowledge-graph path disabled".into()))?;
        if subgraph.is_empty() {
            return Err(Error::Input("graph encoder needs a nonempty subgraph".into()));
        }
        Ok(gat::gat_all_nodes(segs, params.as_slice(), subgraph, emb))
    }

    fn transformer_segs(&self) -> Result<&TransformerSegs> {
        match &self.sequence {
            SequenceSegs::Transformer(s) => Ok(s),
            SequenceSegs::Gru(_) => Err(Error::Config("model uses the recurrent encoder".into())),
        }
    }

    /// Learned time encoding, `T × d_model`.
    pub fn temporal_encode(&self, times: &[f64], params: &ParamVector) -> Result<Tensor> {
        self.check_params(params)?;
        let segs = self.transformer_segs()?;
        Ok(transformer::temporal_encoding(&self.cfg, segs, params.as_slice(), times)?.0)
    }

    /// Sequence vector `h_ts` from the transformer (no dropout).
    pub fn transformer_encode(&self, window: &EpisodeWindow, params: &ParamVector) -> Result<Tensor> {
        self.check_params(params)?;
        let segs = self.transformer_segs()?;
        Ok(Tensor::vector(transformer::transformer_forward(&self.cfg, segs, params.as_slice(), window, None)?.0))
    }

    /// Logistic head over `[h_kg ‖ h_ts]`.
    pub fn fuse_and_predict(&self, h_kg: &[f64], h_ts: &[f64], params: &ParamVector) -> Result<PredictionOutput> {
        self.check_params(params)?;
        let expected_kg = if self.cfg.use_kg { self.cfg.d_kg } else { 0 };
        if h_kg.len() != expected_kg || h_ts.len() != self.cfg.d_model {
            return Err(Error::Config(format!(
                "fusion expects widths ({expected_kg}, {}), got ({}, {})",
                self.cfg.d_model,
                h_kg.len(),
                h_ts.len()
            )));
        }
        Ok(self.head(params.as_slice(), h_kg.to_vec(), h_ts.to_vec()))
    }

    fn head(&self, p: &[f64], h_kg: Vec<f64>, h_ts: Vec<f64>) -> PredictionOutput {
        let mut h_final = h_kg.clone();
        h_final.extend_from_slice(&h_ts);
        let logit = dot(self.head_w.of(p), &h_final) + self.head_b.of(p)[0];
        let probability = sigmoid_scalar(logit).clamp(PROB_EPS, 1.0 - PROB_EPS);
        PredictionOutput { h_kg, h_ts, h_final, logit, probability }
    }

    /// Full forward pass. Dropout is active only when `dropout` is given.
    pub fn forward(&self, params: &ParamVector, sample: &Sample, dropout: Option<&mut Rng>) -> Result<ForwardCache> {
        self.check_params(params)?;
        if sample.window.feature_count() != self.cfg.feature_count {
            return Err(Error::Input(format!(
                "patient {}: {} channels, model expects {}",
                sample.window.patient_id,
                sample.window.feature_count(),
                self.cfg.feature_count
            )));
        }
        let p = params.as_slice();
        let (h_kg, gat_cache) = match (&self.gat, &self.embeddings) {
            (Some(segs), Some(emb)) => {
                let sub = sample
                    .subgraph
                    .as_ref()
                    .ok_or_else(|| Error::Input(format!("patient {}: missing subgraph", sample.window.patient_id)))?;
                let (h, c) = gat::gat_forward(segs, p, sub, emb)?;
                (h, Some(c))
            }
            _ => (Vec::new(), None),
        };
        let (h_ts, sequence) = match &self.sequence {
            SequenceSegs::Transformer(s) => {
                let (h, c) = transformer::transformer_forward(&self.cfg, s, p, &sample.window, dropout)?;
                (h, SequenceCache::Transformer(c))
            }
            SequenceSegs::Gru(s) => {
                let (h, c) = gru::gru_forward(&self.cfg, s, p, &sample.window)?;
                (h, SequenceCache::Gru(c))
            }
        };
        let output = self.head(p, h_kg, h_ts);
        Ok(ForwardCache { gat: gat_cache, sequence, output })
    }

    pub fn predict(&self, params: &ParamVector, sample: &Sample) -> Result<PredictionOutput> {
        Ok(self.forward(params, sample, None)?.output)
    }

    pub fn predict_many(&self, params: &ParamVector, samples: &[Sample]) -> Result<Vec<f64>> {
        samples.iter().map(|s| Ok(self.predict(params, s)?.probability)).collect()
    }

    /// Accumulates `dloss/dlogit · ∂logit/∂θ` into `grad`.
    fn backward(&self, params: &[f64], cache: &ForwardCache, dlogit: f64, grad: &mut [f64]) {
        let out = &cache.output;
        for (g, h) in self.head_w.of_mut(grad).iter_mut().zip(&out.h_final) {
            *g += dlogit * h;
        }
        self.head_b.of_mut(grad)[0] += dlogit;
        let w = self.head_w.of(params);
        let kg_width = out.h_kg.len();
        let dh_kg: Vec<f64> = w[..kg_width].iter().map(|v| v * dlogit).collect();
        let dh_ts: Vec<f64> = w[kg_width..].iter().map(|v| v * dlogit).collect();
        if let (Some(segs), Some(c)) = (&self.gat, &cache.gat) {
            gat::gat_backward(segs, params, c, &dh_kg, grad);
        }
        match (&self.sequence, &cache.sequence) {
            (SequenceSegs::Transformer(s), SequenceCache::Transformer(c)) => {
                transformer::transformer_backward(&self.cfg, s, params, c, &dh_ts, grad)
            }
            (SequenceSegs::Gru(s), SequenceCache::Gru(c)) => gru::gru_backward(&self.cfg, s, params, c, &dh_ts, grad),
            _ => unreachable!("cache built by this model"),
        }
    }

    /// Mean binary cross-entropy over `samples`, without dropout.
    pub fn loss(&self, params: &ParamVector, samples: &[&Sample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::Input("loss over an empty batch".into()));
        }
        let mut total = 0.0;
        for s in samples {
            total += bce_with_logit(self.predict(params, s)?.logit, s.window.label);
        }
        Ok(total / samples.len() as f64)
    }

    /// Mean binary cross-entropy and its gradient. Dropout masks are drawn
    /// from `dropout` when given.
    pub fn loss_and_grad(
        &self,
        params: &ParamVector,
        samples: &[&Sample],
        mut dropout: Option<&mut Rng>,
    ) -> Result<(f64, ParamVector)> {
        if samples.is_empty() {
            return Err(Error::Input("gradient over an empty batch".into()));
        }
        let mut grad = params.zeros_like();
        let scale = 1.0 / samples.len() as f64;
        let mut total = 0.0;
        for s in samples {
            let cache = self.forward(params, s, dropout.as_deref_mut())?;
            let logit = cache.output.logit;
            total += bce_with_logit(logit, s.window.label);
            let dlogit = (sigmoid_scalar(logit) - f64::from(s.window.label)) * scale;
            self.backward(params.as_slice(), &cache, dlogit, grad.as_mut_slice());
        }
        Ok((total * scale, grad))
    }

    /// Indices of the flat coordinates that belong to segments whose name
    /// starts with `prefix`.
    pub fn coordinates_of(&self, prefix: &str) -> Vec<usize> {
        self.layout
            .segments()
            .iter()
            .filter(|s| s.name.starts_with(prefix))
            .flat_map(|s| s.seg.offset..s.seg.offset + s.seg.len())
            .collect()
    }
}

impl ForwardCache {
    pub fn output(&self) -> &PredictionOutput {
        &self.output
    }
}
