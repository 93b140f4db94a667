use super::{AggregationMode, FederationConfig, MetaLearning};
use crate::error::{Error, Result};
use crate::evalcli::metrics::auc;
use crate::model::{ParamVector, SepsisModel};
use crate::numcore::Rng;
use crate::privacy::clip;
use crate::synthdata::{NodeData, Sample};

/// Stream tag for client-side randomness.
const CLIENT_STREAM: u64 = 0x636c_6965_6e74;

/// A simulated hospital. Its samples never leave this struct; the server
/// only ever sees [`ClientUpdate`]s.
#[derive(Debug)]
pub struct ClientState {
    pub id: usize,
    data: NodeData,
    /// Latest local validation AUC; starts at 1.
    pub quality: f64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub messages_sent: u64,
    pub messages_received: u64,
}

/// Everything a client transmits in one round.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub round: usize,
    /// Weights in weight mode; in gradient mode the privatized local
    /// displacement `start − end`, the learning-rate-weighted sum of the
    /// local gradients.
    pub payload: ParamVector,
    pub n_k: usize,
    pub quality: f64,
    /// L2 norm of what was noised (after clipping) when privacy is on.
    pub pre_noise_norm: Option<f64>,
    /// Mean minibatch loss over local training.
    pub train_loss: f64,
    pub byte_size: usize,
}

impl ClientState {
    pub fn new(id: usize, data: NodeData) -> Result<Self> {
        if data.train.is_empty() {
            return Err(Error::Input(format!("client {id} has no training samples")));
        }
        Ok(Self { id, data, quality: 1.0, bytes_sent: 0, bytes_received: 0, messages_sent: 0, messages_received: 0 })
    }

    pub fn n_k(&self) -> usize {
        self.data.train.len()
    }

    pub fn train(&self) -> &[Sample] {
        &self.data.train
    }

    pub fn validation(&self) -> &[Sample] {
        &self.data.val
    }

    /// Local data, for simulation-side evaluation only.
    pub fn data(&self) -> &NodeData {
        &self.data
    }

    fn rng(&self, seed: u64, round: usize) -> Rng {
        Rng::for_stream(seed, &[CLIENT_STREAM, self.id as u64, round as u64])
    }

    /// Checks that an outgoing update carries no reference into local
    /// sample storage and has the shape of a model vector.
    pub fn audit(&self, update: &ClientUpdate) -> Result<()> {
        let payload = update.payload.as_slice().as_ptr_range();
        let overlaps = |s: &Sample| {
            let v = s.window.values.data().as_ptr_range();
            payload.start < v.end && v.start < payload.end
        };
        if self.data.train.iter().chain(&self.data.val).chain(&self.data.test).any(overlaps) {
            return Err(Error::Protocol { client: self.id, reason: "payload aliases local patient data".into() });
        }
        if update.payload.len() != update.payload.layout().total() || update.client_id != self.id {
            return Err(Error::Protocol { client: self.id, reason: "malformed update".into() });
        }
        Ok(())
    }
}

/// `θ − α ∇L(θ)` with the gradient of the mean loss over `support`.
pub fn local_adapt(model: &SepsisModel, theta: &ParamVector, support: &[&Sample], alpha: f64) -> Result<ParamVector> {
    if support.is_empty() {
        return Err(Error::Input("adaptation needs at least one support sample".into()));
    }
    if alpha == 0.0 {
        return Ok(theta.clone());
    }
    let (_, grad) = model.loss_and_grad(theta, support, None)?;
    Ok(first_order_step(theta, &grad, alpha))
}

pub(crate) fn first_order_step(theta: &ParamVector, grad: &ParamVector, alpha: f64) -> ParamVector {
    let mut out = theta.clone();
    out.axpy(-alpha, grad);
    out
}

/// Result of plain minibatch gradient descent.
#[derive(Clone, Debug)]
pub struct LocalOutcome {
    pub params: ParamVector,
    /// Mean of the minibatch losses; NaN when no step was taken.
    pub mean_loss: f64,
    pub steps: usize,
}

/// Minibatch gradient descent over `data` for `epochs` passes. A batch size
/// of 0 means full batch; the visiting order is reshuffled each epoch
/// except in full-batch mode. Dropout masks come from `rng` when the model
/// uses dropout.
pub fn sgd_epochs(
    model: &SepsisModel,
    start: &ParamVector,
    data: &[Sample],
    epochs: usize,
    batch_size: usize,
    lr: f64,
    rng: &mut Rng,
) -> Result<LocalOutcome> {
    let mut params = start.clone();
    let batch = if batch_size == 0 { data.len() } else { batch_size };
    let mut order: Vec<usize> = (0..data.len()).collect();
    let dropout = model.config().dropout_rate > 0.0;
    let mut mask_rng = rng.derive(&[0x6d61_736b]);
    let (mut loss_sum, mut steps) = (0.0, 0usize);
    for _ in 0..epochs {
        if batch < data.len() {
            rng.shuffle(&mut order);
        }
        for chunk in order.chunks(batch.max(1)) {
            let samples: Vec<&Sample> = chunk.iter().map(|&i| &data[i]).collect();
            let (loss, grad) = model.loss_and_grad(&params, &samples, if dropout { Some(&mut mask_rng) } else { None })?;
            if !loss.is_finite() || !grad.is_finite() {
                return Err(Error::Input(format!("non-finite loss {loss} after {steps} steps")));
            }
            params.axpy(-lr, &grad);
            loss_sum += loss;
            steps += 1;
        }
    }
    let mean_loss = if steps > 0 { loss_sum / steps as f64 } else { f64::NAN };
    Ok(LocalOutcome { params, mean_loss, steps })
}

/// Validation AUC of `params` on `samples`; `None` when undefined.
pub fn quality_of(model: &SepsisModel, params: &ParamVector, samples: &[Sample]) -> Result<Option<f64>> {
    if samples.is_empty() {
        return Ok(None);
    }
    let scores = model.predict_many(params, samples)?;
    let labels: Vec<u8> = samples.iter().map(|s| s.window.label).collect();
    match auc(&scores, &labels) {
        Ok(a) => Ok(Some(a.clamp(0.0, 1.0))),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// One client's round: optional adaptation, local training, quality
/// refresh, privatization and byte accounting.
pub fn local_train(
    model: &SepsisModel,
    theta: &ParamVector,
    client: &mut ClientState,
    cfg: &FederationConfig,
    round: usize,
    seed: u64,
) -> Result<ClientUpdate> {
    let mut rng = client.rng(seed, round);
    client.bytes_received += theta.byte_size() as u64;
    client.messages_received += 1;

    let start = match cfg.meta_learning {
        MetaLearning::Off => theta.clone(),
        MetaLearning::Fomaml => {
            let mut support: Vec<&Sample> = client.data.train.iter().collect();
            if cfg.support_size > 0 && cfg.support_size < support.len() {
                rng.derive(&[0x7375_7070]).shuffle(&mut support);
                support.truncate(cfg.support_size);
            }
            local_adapt(model, theta, &support, cfg.meta_lr)?
        }
    };
    let outcome = sgd_epochs(model, &start, &client.data.train, cfg.local_epochs, cfg.batch_size, cfg.local_lr, &mut rng)?;
    if let Some(q) = quality_of(model, &outcome.params, &client.data.val)? {
        client.quality = q;
    }

    let mut noise_rng = rng.derive(&[0x6e6f_6973_65]);
    let (payload, pre_noise_norm) = match cfg.mode {
        AggregationMode::FedavgWeights => {
            if cfg.dp.enabled {
                let mut delta = outcome.params.clone();
                delta.axpy(-1.0, theta);
                let clipped = clip(&delta, cfg.dp.clip_norm)?;
                let norm = clipped.l2_norm();
                let mut p = cfg.dp.privatize(&delta, &mut noise_rng)?;
                p.axpy(1.0, theta);
                (p, Some(norm))
            } else {
                (outcome.params.clone(), None)
            }
        }
        AggregationMode::DpQualityGradient => {
            let mut grad = start.clone();
            grad.axpy(-1.0, &outcome.params);
            if cfg.dp.enabled {
                let norm = clip(&grad, cfg.dp.clip_norm)?.l2_norm();
                (cfg.dp.privatize(&grad, &mut noise_rng)?, Some(norm))
            } else {
                (grad, None)
            }
        }
    };
    let byte_size = payload.byte_size();
    client.bytes_sent += byte_size as u64;
    client.messages_sent += 1;
    let update = ClientUpdate {
        client_id: client.id,
        round,
        payload,
        n_k: client.n_k(),
        quality: client.quality,
        pre_noise_norm,
        train_loss: outcome.mean_loss,
        byte_size,
    };
    client.audit(&update)?;
    Ok(update)
}
