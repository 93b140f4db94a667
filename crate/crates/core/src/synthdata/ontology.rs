//! Built-in medical mini-ontology and clinical channel definitions.

use crate::kgraph::{EntityId, KgStore};

pub const RELATIONS: [&str; 5] = ["has_symptom", "indicates", "elevates_lab", "comorbid_with", "treated_by"];

/// A measured clinical channel and how sepsis moves it.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSpec {
    pub name: &'static str,
    pub entity: EntityId,
    /// Population mean and standard deviation in raw units.
    pub mean: f64,
    pub sd: f64,
    /// +1 when deterioration raises the channel, −1 when it lowers it.
    pub direction: f64,
    /// Deterioration effect size in standard deviations.
    pub amplitude: f64,
    pub findings: Vec<FindingRule>,
}

/// Abnormal finding triggered by the last measured value of a channel.
#[derive(Clone, Debug, PartialEq)]
pub struct FindingRule {
    pub entity: EntityId,
    pub threshold: f64,
    pub above: bool,
}

impl FindingRule {
    pub fn triggered(&self, value: f64) -> bool {
        if self.above {
            value > self.threshold
        } else {
            value < self.threshold
        }
    }
}

#[derive(Clone, Debug)]
pub struct Ontology {
    pub store: KgStore,
    pub channels: Vec<ChannelSpec>,
    /// Comorbidity entities with their contribution to sepsis risk.
    pub comorbidities: Vec<(EntityId, f64)>,
}

const CHANNELS: [(&str, f64, f64, f64, f64); 7] = [
    ("heart_rate", 85.0, 12.0, 1.0, 1.0),
    ("mean_arterial_pressure", 80.0, 9.0, -1.0, 1.0),
    ("temperature", 37.0, 0.5, 1.0, 0.6),
    ("respiratory_rate", 16.0, 3.0, 1.0, 0.8),
    ("lactate", 1.3, 0.5, 1.0, 1.0),
    ("white_cell_count", 8.0, 2.5, 1.0, 0.6),
    ("creatinine", 0.9, 0.25, 1.0, 0.5),
];

const FINDINGS: [(&str, usize, f64, bool); 10] = [
    ("tachycardia", 0, 100.0, true),
    ("bradycardia", 0, 55.0, false),
    ("hypotension", 1, 65.0, false),
    ("fever", 2, 38.0, true),
    ("hypothermia", 2, 36.0, false),
    ("tachypnea", 3, 22.0, true),
    ("hyperlactatemia", 4, 2.0, true),
    ("leukocytosis", 5, 12.0, true),
    ("leukopenia", 5, 4.0, false),
    ("acute_kidney_injury", 6, 1.5, true),
];

const HIGH_RISK: [&str; 12] = [
    "diabetes_mellitus",
    "chronic_kidney_disease",
    "cirrhosis",
    "copd",
    "heart_failure",
    "malignancy",
    "hiv_infection",
    "organ_transplant",
    "neutropenia_history",
    "chemotherapy_exposure",
    "chronic_steroid_use",
    "dialysis_dependence",
];

const LOW_RISK: [&str; 12] = [
    "hypertension",
    "hyperlipidemia",
    "osteoarthritis",
    "hypothyroidism",
    "gastroesophageal_reflux",
    "migraine",
    "mild_asthma",
    "glaucoma",
    "gout",
    "anxiety_disorder",
    "prostatic_hyperplasia",
    "allergic_rhinitis",
];

const HIGH_HUBS: [&str; 2] = ["immunocompromised_state", "chronic_organ_dysfunction"];
const LOW_HUB: &str = "stable_chronic_condition";

const HIGH_DRUGS: [&str; 3] = ["insulin", "corticosteroids", "broad_spectrum_antibiotics"];
const LOW_DRUGS: [&str; 4] = ["statins", "antihypertensives", "analgesics", "bronchodilators"];
const EXTRA_DRUGS: [&str; 1] = ["vasopressors"];

const HIGH_SYMPTOMS: [&str; 5] = ["fatigue", "confusion", "dyspnea", "edema", "reduced_urine_output"];
const LOW_SYMPTOMS: [&str; 4] = ["joint_pain", "headache", "chills", "fatigue"];
const EXTRA_SYMPTOMS: [&str; 1] = ["palpitations"];

const HIGH_LABS: [usize; 3] = [6, 4, 5];
const LOW_LABS: [usize; 2] = [0, 3];

const FINDING_SYMPTOMS: [(&str, &str); 6] = [
    ("fever", "chills"),
    ("hypotension", "confusion"),
    ("tachypnea", "dyspnea"),
    ("acute_kidney_injury", "reduced_urine_output"),
    ("hyperlactatemia", "confusion"),
    ("tachycardia", "palpitations"),
];

const FINDING_DRUGS: [(&str, &str); 5] = [
    ("hypotension", "vasopressors"),
    ("fever", "broad_spectrum_antibiotics"),
    ("leukocytosis", "broad_spectrum_antibiotics"),
    ("hyperlactatemia", "vasopressors"),
    ("hypothermia", "broad_spectrum_antibiotics"),
];

impl Ontology {
    /// The fixed ontology used by the synthetic cohorts: about 60 entities,
    /// 5 relation types and about 150 facts. High-risk comorbidities share
    /// hub concepts so their embeddings cluster.
    pub fn builtin() -> Self {
        let mut kg = KgStore::new();
        for r in RELATIONS {
            kg.add_relation(r);
        }
        let mut channels = Vec::new();
        for (name, mean, sd, direction, amplitude) in CHANNELS {
            let entity = kg.add_entity(name);
            channels.push(ChannelSpec { name, entity, mean, sd, direction, amplitude, findings: Vec::new() });
        }
        for (name, channel, threshold, above) in FINDINGS {
            let entity = kg.add_entity(name);
            channels[channel].findings.push(FindingRule { entity, threshold, above });
            kg.add_named(name, "indicates", CHANNELS[channel].0);
        }
        for s in HIGH_SYMPTOMS.iter().chain(&LOW_SYMPTOMS).chain(&EXTRA_SYMPTOMS) {
            kg.add_entity(s);
        }
        for d in HIGH_DRUGS.iter().chain(&LOW_DRUGS).chain(&EXTRA_DRUGS) {
            kg.add_entity(d);
        }
        for hub in HIGH_HUBS.iter().chain([&LOW_HUB]) {
            kg.add_entity(hub);
        }
        kg.add_named(HIGH_HUBS[0], "elevates_lab", "white_cell_count");
        kg.add_named(HIGH_HUBS[1], "elevates_lab", "creatinine");
        kg.add_named(HIGH_HUBS[1], "has_symptom", "fatigue");
        kg.add_named(LOW_HUB, "treated_by", "analgesics");
        for (f, s) in FINDING_SYMPTOMS {
            kg.add_named(f, "has_symptom", s);
        }
        for (f, d) in FINDING_DRUGS {
            kg.add_named(f, "treated_by", d);
        }
        let mut comorbidities = Vec::new();
        for (i, name) in HIGH_RISK.iter().enumerate() {
            comorbidities.push((kg.add_entity(name), 1.0));
            for hub in HIGH_HUBS {
                kg.add_named(name, "comorbid_with", hub);
            }
            kg.add_named(name, "has_symptom", HIGH_SYMPTOMS[i % HIGH_SYMPTOMS.len()]);
            kg.add_named(name, "has_symptom", HIGH_SYMPTOMS[(i + 2) % HIGH_SYMPTOMS.len()]);
            kg.add_named(name, "treated_by", HIGH_DRUGS[i % HIGH_DRUGS.len()]);
            kg.add_named(name, "elevates_lab", CHANNELS[HIGH_LABS[i % HIGH_LABS.len()]].0);
        }
        for (i, name) in LOW_RISK.iter().enumerate() {
            comorbidities.push((kg.add_entity(name), 0.0));
            kg.add_named(name, "comorbid_with", LOW_HUB);
            kg.add_named(name, "has_symptom", LOW_SYMPTOMS[i % LOW_SYMPTOMS.len()]);
            kg.add_named(name, "has_symptom", LOW_SYMPTOMS[(i + 1) % LOW_SYMPTOMS.len()]);
            kg.add_named(name, "treated_by", LOW_DRUGS[i % LOW_DRUGS.len()]);
            if i % 2 == 0 {
                kg.add_named(name, "elevates_lab", CHANNELS[LOW_LABS[(i / 2) % LOW_LABS.len()]].0);
            }
        }
        Self { store: kg, channels, comorbidities }
    }

    pub fn comorbidity_weight(&self, entity: EntityId) -> Option<f64> {
        self.comorbidities.iter().find(|(e, _)| *e == entity).map(|&(_, w)| w)
    }
}
