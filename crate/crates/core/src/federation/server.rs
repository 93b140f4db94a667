use serde::Serialize;

use super::client::{local_train, sgd_epochs, ClientState, ClientUpdate};
use super::{AggregationMode, FederationConfig};
use crate::error::{Error, Result};
use crate::ledger::{param_digest, EntryMeta, Ledger};
use crate::model::{ParamVector, SepsisModel};
use crate::numcore::Rng;
use crate::privacy::epsilon_spent;
use crate::synthdata::Sample;

const CLOCK_EPOCH_MS: u64 = 1_700_000_000_000;
const ROUND_MS: u64 = 60_000;
const CENTRAL_STREAM: u64 = 0x6365_6e74_7261_6c;

fn check_layouts(updates: &[ClientUpdate]) -> Result<()> {
    let first = updates.first().ok_or_else(|| Error::Input("aggregation needs at least one update".into()))?;
    for u in updates {
        if !u.payload.same_layout(&first.payload) || u.payload.len() != first.payload.len() {
            return Err(Error::Protocol { client: u.client_id, reason: "payload layout differs from the first update".into() });
        }
    }
    Ok(())
}

/// `Σ_k (n_k / n) w_k` with `n = Σ n_k`.
pub fn aggregate_fedavg(updates: &[ClientUpdate]) -> Result<ParamVector> {
    check_layouts(updates)?;
    let n: usize = updates.iter().map(|u| u.n_k).sum();
    if n == 0 {
        return Err(Error::Input("aggregation weights sum to zero".into()));
    }
    let mut out = updates[0].payload.zeros_like();
    for u in updates {
        out.axpy(u.n_k as f64 / n as f64, &u.payload);
    }
    Ok(out)
}

/// `w − η Σ_k (n_k Q_k / N) g_k` with `N = Σ n_k Q_k`. Returns `None` when
/// `N = 0`, in which case the caller keeps `w`.
pub fn aggregate_quality_dp(w: &ParamVector, updates: &[ClientUpdate], eta: f64) -> Result<Option<ParamVector>> {
    check_layouts(updates)?;
    for u in updates {
        if !u.payload.same_layout(w) {
            return Err(Error::Protocol { client: u.client_id, reason: "payload layout differs from the global model".into() });
        }
        if !(0.0..=1.0).contains(&u.quality) {
            return Err(Error::Protocol { client: u.client_id, reason: format!("quality {} outside [0, 1]", u.quality) });
        }
    }
    let total: f64 = updates.iter().map(|u| u.n_k as f64 * u.quality).sum();
    if total <= 0.0 {
        return Ok(None);
    }
    let mut out = w.clone();
    for u in updates {
        let weight = u.n_k as f64 * u.quality / total;
        if weight > 0.0 {
            out.axpy(-eta * weight, &u.payload);
        }
    }
    Ok(Some(out))
}

/// Trains on pooled data with the same local optimizer the clients use,
/// returning the parameters after each round.
pub fn train_centralized(
    model: &SepsisModel,
    init: &ParamVector,
    data: &[Sample],
    cfg: &FederationConfig,
    seed: u64,
) -> Result<Vec<ParamVector>> {
    if data.is_empty() {
        return Err(Error::Input("centralized training needs data".into()));
    }
    let mut params = init.clone();
    let mut trajectory = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        let mut rng = Rng::for_stream(seed, &[CENTRAL_STREAM, round as u64]);
        params = sgd_epochs(model, &params, data, cfg.local_epochs, cfg.batch_size, cfg.local_lr, &mut rng)?.params;
        trajectory.push(params.clone());
    }
    Ok(trajectory)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundStatus {
    Completed,
    /// Every surviving client reported zero quality.
    Skipped,
    /// No client produced an update.
    Aborted,
}

#[derive(Clone, Debug, Serialize)]
pub struct RoundReport {
    /// One-based round number; equals the ledger index of its entry.
    pub round: usize,
    pub mode: &'static str,
    pub status: RoundStatus,
    /// `n_k`-weighted mean of the clients' local training losses.
    pub train_loss: Option<f64>,
    /// `(client id, Q_k)` after this round, in id order.
    pub qualities: Vec<(usize, f64)>,
    pub participants: Vec<usize>,
    pub failures: Vec<(usize, String)>,
    /// Cumulative per-client epsilon; `None` when privacy is off.
    pub epsilon: Option<f64>,
    /// Bytes moved in both directions since the federation started.
    pub bytes_total: u64,
    pub ledger_hash: String,
}

/// Holds the global model and drives rounds over a fixed set of clients.
#[derive(Debug)]
pub struct FederationServer<'m> {
    model: &'m SepsisModel,
    params: ParamVector,
    cfg: FederationConfig,
    seed: u64,
    round: usize,
    ledger: Ledger,
    bytes_total: u64,
    released_rounds: u64,
}

impl<'m> FederationServer<'m> {
    /// Records the initial model as the genesis ledger entry.
    pub fn new(model: &'m SepsisModel, init: ParamVector, cfg: FederationConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if init.layout().total() != model.layout().total() {
            return Err(Error::Config("initial parameters do not match the model layout".into()));
        }
        let mut ledger = Ledger::new();
        ledger.append(
            param_digest(&init),
            CLOCK_EPOCH_MS,
            EntryMeta { mode: "genesis".into(), client_count: 0, epsilon: 0.0 },
        )?;
        Ok(Self { model, params: init, cfg, seed, round: 0, ledger, bytes_total: 0, released_rounds: 0 })
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn model(&self) -> &SepsisModel {
        self.model
    }

    pub fn config(&self) -> &FederationConfig {
        &self.cfg
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn rounds_completed(&self) -> usize {
        self.round
    }

    pub fn bytes_total(&self) -> u64 {
        self.bytes_total
    }

    fn epsilon(&self) -> Result<f64> {
        Ok(epsilon_spent(self.cfg.dp.noise_multiplier, self.cfg.dp.delta, self.released_rounds)?.epsilon)
    }

    /// Broadcasts the global model, collects updates in client-id order,
    /// aggregates, and appends one ledger entry.
    pub fn run_round(&mut self, clients: &mut [ClientState]) -> Result<RoundReport> {
        let mut order: Vec<usize> = (0..clients.len()).collect();
        order.sort_by_key(|&i| clients[i].id);
        if order.windows(2).any(|w| clients[w[0]].id == clients[w[1]].id) {
            return Err(Error::Config("client ids must be unique".into()));
        }

        let mut updates = Vec::with_capacity(clients.len());
        let mut failures = Vec::new();
        for &i in &order {
            let client = &mut clients[i];
            let before = client.bytes_sent + client.bytes_received;
            match local_train(self.model, &self.params, client, &self.cfg, self.round, self.seed) {
                Ok(update) if update.round == self.round => {
                    updates.push(update);
                }
                Ok(update) => {
                    failures.push((client.id, format!("update for round {} during round {}", update.round, self.round)));
                }
                Err(e) => {
                    log::warn!("client {} excluded from round {}: {e}", client.id, self.round + 1);
                    failures.push((client.id, e.to_string()));
                }
            }
            self.bytes_total += client.bytes_sent + client.bytes_received - before;
        }

        let status = if updates.is_empty() {
            log::warn!("round {} aborted: no client produced an update", self.round + 1);
            RoundStatus::Aborted
        } else {
            match self.cfg.mode {
                AggregationMode::FedavgWeights => {
                    self.params = aggregate_fedavg(&updates)?;
                    RoundStatus::Completed
                }
                AggregationMode::DpQualityGradient => {
                    match aggregate_quality_dp(&self.params, &updates, self.cfg.global_lr)? {
                        Some(p) => {
                            self.params = p;
                            RoundStatus::Completed
                        }
                        None => {
                            log::warn!("round {} skipped: all client qualities are zero", self.round + 1);
                            RoundStatus::Skipped
                        }
                    }
                }
            }
        };
        if self.cfg.dp.enabled && !updates.is_empty() {
            self.released_rounds += 1;
        }
        let epsilon = if self.cfg.dp.enabled { Some(self.epsilon()?) } else { None };

        self.round += 1;
        let entry = self.ledger.append(
            param_digest(&self.params),
            CLOCK_EPOCH_MS + self.round as u64 * ROUND_MS,
            EntryMeta {
                mode: self.cfg.mode.name().into(),
                client_count: updates.len() as u32,
                epsilon: epsilon.unwrap_or(f64::INFINITY),
            },
        )?;
        let ledger_hash = hex::encode(entry.entry_hash);

        let n: usize = updates.iter().filter(|u| u.train_loss.is_finite()).map(|u| u.n_k).sum();
        let train_loss = (n > 0).then(|| {
            updates.iter().filter(|u| u.train_loss.is_finite()).map(|u| u.n_k as f64 * u.train_loss).sum::<f64>() / n as f64
        });
        Ok(RoundReport {
            round: self.round,
            mode: self.cfg.mode.name(),
            status,
            train_loss,
            qualities: order.iter().map(|&i| (clients[i].id, clients[i].quality)).collect(),
            participants: updates.iter().map(|u| u.client_id).collect(),
            failures,
            epsilon,
            bytes_total: self.bytes_total,
            ledger_hash,
        })
    }
}
