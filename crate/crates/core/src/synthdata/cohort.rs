//! Synthetic ICU cohort with a planted sepsis rule.
//!
//! Every patient has a latent deterioration score `d ~ N(0, 1)` that drives
//! a linear ramp across the final 12 hours of the window (heart rate,
//! lactate and the other channels drift in their sepsis direction, mean
//! arterial pressure falls), and two comorbidities whose ontology weights
//! add up to a comorbidity load `k`. The risk score is
//!
//! ```text
//! R = d + β (k − E[k])
//! ```
//!
//! and onset happens within the 6-hour horizon exactly when `R ≥ θ`, where
//! `θ` is the population quantile matching the target prevalence. Earlier
//! in the window each patient also has one transient excursion in the same
//! channel directions that carries no label information.
//!
//! Observation times are informative as well: during the final 12 hours the
//! mean sampling gap shrinks by a factor `exp(−λ d)`, so deteriorating
//! patients are measured more often.

use serde::{Deserialize, Serialize};

use super::ontology::Ontology;
use super::window::{EpisodeWindow, WINDOW_HOURS};
use crate::error::{Error, Result};
use crate::kgraph::EntityId;
use crate::numcore::{Rng, Tensor};

pub const HORIZON_HOURS: f64 = 6.0;
pub const TREND_HOURS: f64 = 12.0;
pub const COMORBIDITIES_PER_PATIENT: usize = 2;
pub const MIN_GAP_HOURS: f64 = 0.25;
pub const MAX_GAP_HOURS: f64 = 6.0;
const BASE_GAP_HOURS: f64 = 1.5;
const BASELINE_SD: f64 = 0.8;
const NOISE_SD: f64 = 0.3;
const EXCURSION_WIDTH_HOURS: f64 = 3.0;
const PREVALENCE_TOLERANCE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    pub n_patients: usize,
    pub prevalence: f64,
    /// Number of clinical channels, taken in ontology order (at most 7).
    pub channels: usize,
    /// Spread of per-patient mean sampling gaps: the mean gap is
    /// `1.5 h · exp(u · irregularity)` with `u ~ U(−1, 1)`.
    pub irregularity: f64,
    /// Probability that a channel is unmeasured at a sampling time.
    pub missingness: f64,
    pub seed: u64,
    /// Weight `β` of the comorbidity load in the risk score.
    pub kg_signal: f64,
    /// Size of the final-hours ramp per unit of deterioration.
    pub trend_signal: f64,
    /// Size of the uninformative early excursion.
    pub distractor: f64,
    /// Log-rate increase of sampling during the final hours per unit of
    /// deterioration: sicker patients are measured more often.
    pub sampling_signal: f64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            n_patients: 2000,
            prevalence: 0.2,
            channels: 7,
            irregularity: 0.7,
            missingness: 0.3,
            seed: 0,
            kg_signal: 0.6,
            trend_signal: 0.4,
            distractor: 1.0,
            sampling_signal: 0.7,
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_patients == 0 {
            return bad("cohort needs at least one patient".into());
        }
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return bad(format!("prevalence must lie in (0, 1), got {}", self.prevalence));
        }
        if !(1..=7).contains(&self.channels) {
            return bad(format!("channel count must be 1 to 7, got {}", self.channels));
        }
        if !(self.missingness >= 0.0 && self.missingness < 1.0) {
            return bad(format!("missingness must lie in [0, 1), got {}", self.missingness));
        }
        if !(self.irregularity >= 0.0 && self.irregularity.is_finite()) {
            return bad(format!("irregularity must be nonnegative, got {}", self.irregularity));
        }
        for (name, v) in [("kg_signal", self.kg_signal), ("trend_signal", self.trend_signal), ("distractor", self.distractor), ("sampling_signal", self.sampling_signal)]
        {
            if !v.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        Ok(())
    }
}

/// Hidden variables behind one patient's window and label.
#[derive(Clone, Debug, PartialEq)]
pub struct Latent {
    pub deterioration: f64,
    pub comorbidities: Vec<EntityId>,
    pub comorbidity_load: f64,
    pub risk: f64,
    /// Hours from window start to sepsis onset.
    pub onset_hours: f64,
    pub excursion_center: f64,
    pub excursion_amplitude: f64,
}

#[derive(Clone, Debug)]
pub struct Cohort {
    pub config: CohortConfig,
    /// Raw windows; unmeasured values are NaN.
    pub windows: Vec<EpisodeWindow>,
    pub latents: Vec<Latent>,
    /// Risk threshold `θ`.
    pub threshold: f64,
    /// `E[k]` over random comorbidity pairs.
    pub mean_load: f64,
}

impl Cohort {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn prevalence(&self) -> f64 {
        self.windows.iter().map(|w| f64::from(w.label)).sum::<f64>() / self.len() as f64
    }
}

/// Onset time implied by a risk score: inside the horizon iff `risk ≥ θ`.
pub fn onset_from_risk(risk: f64, threshold: f64) -> f64 {
    if risk >= threshold {
        WINDOW_HOURS + HORIZON_HOURS * (-(risk - threshold)).exp()
    } else {
        WINDOW_HOURS + HORIZON_HOURS + 10.0 * (threshold - risk)
    }
}

/// Ramp profile: 0 before the final 12 hours, rising linearly to 1.
pub fn ramp(t: f64) -> f64 {
    ((t - (WINDOW_HOURS - TREND_HOURS)) / TREND_HOURS).clamp(0.0, 1.0)
}

/// All equally likely comorbidity loads of a random pair.
fn pair_loads(ontology: &Ontology) -> Vec<f64> {
    let w: Vec<f64> = ontology.comorbidities.iter().map(|&(_, w)| w).collect();
    let mut out = Vec::new();
    for i in 0..w.len() {
        for j in i + 1..w.len() {
            out.push(w[i] + w[j]);
        }
    }
    out
}

/// `P(Z > x)` for a standard normal `Z`.
fn normal_upper_tail(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Population quantile `θ` with `P(R ≥ θ) = prevalence`, by bisection on
/// the Gaussian mixture CDF.
fn risk_threshold(loads: &[f64], mean_load: f64, beta: f64, prevalence: f64) -> f64 {
    let tail = |theta: f64| {
        loads.iter().map(|k| normal_upper_tail(theta - beta * (k - mean_load))).sum::<f64>() / loads.len() as f64
    };
    let (mut lo, mut hi) = (-20.0 - beta.abs() * 10.0, 20.0 + beta.abs() * 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if tail(mid) > prevalence {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn generate_cohort(cfg: &CohortConfig, ontology: &Ontology) -> Result<Cohort> {
    cfg.validate()?;
    if ontology.comorbidities.len() < COMORBIDITIES_PER_PATIENT {
        return Err(Error::Config("ontology has too few comorbidities".into()));
    }
    let loads = pair_loads(ontology);
    let mean_load = loads.iter().sum::<f64>() / loads.len() as f64;
    let threshold = risk_threshold(&loads, mean_load, cfg.kg_signal, cfg.prevalence);
    let mut windows = Vec::with_capacity(cfg.n_patients);
    let mut latents = Vec::with_capacity(cfg.n_patients);
    for i in 0..cfg.n_patients {
        let mut rng = Rng::for_stream(cfg.seed, &[0x636f_686f_7274, i as u64]);
        let (w, l) = generate_patient(cfg, ontology, i as u64, threshold, mean_load, &mut rng);
        windows.push(w);
        latents.push(l);
    }
    let cohort = Cohort { config: cfg.clone(), windows, latents, threshold, mean_load };
    let rate = cohort.prevalence();
    if (rate - cfg.prevalence).abs() > PREVALENCE_TOLERANCE {
        return Err(Error::Config(format!(
            "cannot reach prevalence {} with {} patients (got {rate:.3})",
            cfg.prevalence, cfg.n_patients
        )));
    }
    Ok(cohort)
}

fn generate_patient(
    cfg: &CohortConfig,
    ontology: &Ontology,
    patient_id: u64,
    threshold: f64,
    mean_load: f64,
    rng: &mut Rng,
) -> (EpisodeWindow, Latent) {
    let f = cfg.channels;
    let channels = &ontology.channels[..f];

    let deterioration = rng.normal();
    let mean_gap = BASE_GAP_HOURS * (cfg.irregularity * rng.uniform_range(-1.0, 1.0)).exp();
    let late_gap = mean_gap * (-cfg.sampling_signal * deterioration).exp();
    let mut timestamps = Vec::new();
    let mut t = rng.uniform_range(0.0, 1.0);
    while t <= WINDOW_HOURS {
        timestamps.push(t);
        let gap = if t >= WINDOW_HOURS - TREND_HOURS { late_gap } else { mean_gap };
        t += rng.exponential(gap).clamp(MIN_GAP_HOURS, MAX_GAP_HOURS);
    }

    let mut picks: Vec<usize> = (0..ontology.comorbidities.len()).collect();
    rng.shuffle(&mut picks);
    let mut comorbidities: Vec<EntityId> =
        picks[..COMORBIDITIES_PER_PATIENT].iter().map(|&j| ontology.comorbidities[j].0).collect();
    comorbidities.sort();
    let comorbidity_load: f64 =
        picks[..COMORBIDITIES_PER_PATIENT].iter().map(|&j| ontology.comorbidities[j].1).sum();
    let risk = deterioration + cfg.kg_signal * (comorbidity_load - mean_load);
    let onset_hours = onset_from_risk(risk, threshold);
    let label = u8::from(onset_hours <= WINDOW_HOURS + HORIZON_HOURS);

    let excursion_center = rng.uniform_range(6.0, 30.0);
    let excursion_amplitude = cfg.distractor * rng.normal();
    let baselines: Vec<f64> = (0..f).map(|_| BASELINE_SD * rng.normal()).collect();

    let steps = timestamps.len();
    let mut values = Vec::with_capacity(steps * f);
    let mut mask = Vec::with_capacity(steps * f);
    for &time in &timestamps {
        let bump = (-(time - excursion_center).powi(2) / (2.0 * EXCURSION_WIDTH_HOURS.powi(2))).exp();
        let drive = cfg.trend_signal * deterioration * ramp(time) + excursion_amplitude * bump;
        let start = mask.len();
        for (c, ch) in channels.iter().enumerate() {
            let z = baselines[c] + ch.direction * ch.amplitude * drive + NOISE_SD * rng.normal();
            let seen = !rng.bernoulli(cfg.missingness);
            mask.push(seen);
            values.push(ch.mean + ch.sd * z);
        }
        if !mask[start..].iter().any(|&m| m) {
            mask[start + rng.below(f)] = true;
        }
    }
    for (v, &m) in values.iter_mut().zip(&mask) {
        if !m {
            *v = f64::NAN;
        }
    }

    let mut feature_entities = comorbidities.clone();
    for (c, ch) in channels.iter().enumerate() {
        let last = (0..steps).rev().find(|&s| mask[s * f + c]).map(|s| values[s * f + c]);
        if let Some(v) = last {
            feature_entities.extend(ch.findings.iter().filter(|r| r.triggered(v)).map(|r| r.entity));
        }
    }
    feature_entities.sort();
    feature_entities.dedup();

    let window = EpisodeWindow {
        patient_id,
        timestamps,
        values: Tensor::new(vec![steps, f], values).expect("shape matches"),
        observed_mask: mask,
        feature_entities,
        label,
    };
    let latent = Latent {
        deterioration,
        comorbidities,
        comorbidity_load,
        risk,
        onset_hours,
        excursion_center,
        excursion_amplitude,
    };
    (window, latent)
}
