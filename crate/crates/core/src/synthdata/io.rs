//! Columnar text format for cohorts.
//!
//! `observations.csv` holds one measured value per line with header
//! `patient_id,time,channel,value`, where `channel` is the channel name.
//! `patients.csv` holds `patient_id,label,channels,entities`, where
//! `channels` is the channel count and `entities` the `;`-separated names of
//! the patient's linked ontology entities. Numbers are written in the
//! shortest form that parses back to the identical value. A sampling time
//! appears once per measured channel, so every sampling time with at least
//! one measurement survives a round trip.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ontology::ChannelSpec;
use super::window::EpisodeWindow;
use crate::error::{Error, Result};
use crate::kgraph::KgStore;
use crate::numcore::Tensor;

pub const OBSERVATIONS_FILE: &str = "observations.csv";
pub const PATIENTS_FILE: &str = "patients.csv";

#[derive(Serialize, Deserialize)]
struct Observation {
    patient_id: u64,
    time: f64,
    channel: String,
    value: f64,
}

#[derive(Serialize, Deserialize)]
struct PatientRow {
    patient_id: u64,
    label: u8,
    channels: usize,
    entities: String,
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse { line, reason: format!("{other:?}") },
    }
}

pub fn export_cohort(dir: &Path, windows: &[EpisodeWindow], channels: &[ChannelSpec], store: &KgStore) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut obs = csv::Writer::from_path(dir.join(OBSERVATIONS_FILE)).map_err(csv_error)?;
    let mut pats = csv::Writer::from_path(dir.join(PATIENTS_FILE)).map_err(csv_error)?;
    for w in windows {
        for (t, &time) in w.timestamps.iter().enumerate() {
            for c in 0..w.feature_count() {
                if w.observed(t, c) {
                    let row = Observation {
                        patient_id: w.patient_id,
                        time,
                        channel: channels[c].name.to_owned(),
                        value: w.values.get(t, c),
                    };
                    obs.serialize(row).map_err(csv_error)?;
                }
            }
        }
        let names: Vec<&str> = w.feature_entities.iter().map(|&e| store.entity_name(e)).collect::<Result<_>>()?;
        pats.serialize(PatientRow {
            patient_id: w.patient_id,
            label: w.label,
            channels: w.feature_count(),
            entities: names.join(";"),
        })
        .map_err(csv_error)?;
    }
    obs.flush()?;
    pats.flush()?;
    Ok(())
}

/// Reads a cohort back as raw windows (unmeasured values NaN), in the order
/// of `patients.csv`.
pub fn import_cohort(dir: &Path, channels: &[ChannelSpec], store: &KgStore) -> Result<Vec<EpisodeWindow>> {
    let channel_index: BTreeMap<&str, usize> = channels.iter().enumerate().map(|(i, c)| (c.name, i)).collect();
    let mut rows: BTreeMap<u64, BTreeMap<u64, Vec<(usize, f64)>>> = BTreeMap::new();
    let mut reader = csv::Reader::from_path(dir.join(OBSERVATIONS_FILE)).map_err(csv_error)?;
    for (i, rec) in reader.deserialize::<Observation>().enumerate() {
        let o = rec.map_err(csv_error)?;
        let c = *channel_index.get(o.channel.as_str()).ok_or_else(|| Error::Parse {
            line: i + 2,
            reason: format!("unknown channel `{}`", o.channel),
        })?;
        if !o.time.is_finite() || !o.value.is_finite() {
            return Err(Error::Parse { line: i + 2, reason: "non-finite number".into() });
        }
        rows.entry(o.patient_id).or_default().entry(o.time.to_bits()).or_default().push((c, o.value));
    }
    let mut out = Vec::new();
    let mut reader = csv::Reader::from_path(dir.join(PATIENTS_FILE)).map_err(csv_error)?;
    for (i, rec) in reader.deserialize::<PatientRow>().enumerate() {
        let p = rec.map_err(csv_error)?;
        let f = p.channels;
        let steps = rows.remove(&p.patient_id).unwrap_or_default();
        let mut timestamps: Vec<f64> = steps.keys().map(|&b| f64::from_bits(b)).collect();
        timestamps.sort_by(f64::total_cmp);
        let mut values = vec![f64::NAN; timestamps.len() * f];
        let mut mask = vec![false; timestamps.len() * f];
        for (t, time) in timestamps.iter().enumerate() {
            for &(c, v) in &steps[&time.to_bits()] {
                if c >= f {
                    return Err(Error::Parse { line: i + 2, reason: format!("channel {c} beyond declared count {f}") });
                }
                values[t * f + c] = v;
                mask[t * f + c] = true;
            }
        }
        let feature_entities = if p.entities.is_empty() {
            Vec::new()
        } else {
            p.entities.split(';').map(|n| store.entity_id(n)).collect::<Result<Vec<_>>>()?
        };
        out.push(EpisodeWindow {
            patient_id: p.patient_id,
            values: Tensor::new(vec![timestamps.len(), f], values)?,
            timestamps,
            observed_mask: mask,
            feature_entities,
            label: p.label,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::cohort::{generate_cohort, CohortConfig};
    use crate::synthdata::ontology::Ontology;

    #[test]
    fn round_trip_preserves_windows() {
        let o = Ontology::builtin();
        let c = generate_cohort(&CohortConfig { n_patients: 50, seed: 6, ..CohortConfig::default() }, &o).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export_cohort(dir.path(), &c.windows, &o.channels, &o.store).unwrap();
        let back = import_cohort(dir.path(), &o.channels, &o.store).unwrap();
        assert_eq!(back.len(), c.windows.len());
        for (a, b) in back.iter().zip(&c.windows) {
            assert_eq!(a.patient_id, b.patient_id);
            assert_eq!(a.timestamps, b.timestamps);
            assert_eq!(a.observed_mask, b.observed_mask);
            assert_eq!(a.feature_entities, b.feature_entities);
            assert_eq!(a.label, b.label);
            for (x, y) in a.values.data().iter().zip(b.values.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn unknown_channel_is_a_parse_error() {
        let o = Ontology::builtin();
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(OBSERVATIONS_FILE), "patient_id,time,channel,value\n1,0.5,pulse,80\n").unwrap();
        std::fs::write(dir.path().join(PATIENTS_FILE), "patient_id,label,channels,entities\n").unwrap();
        assert!(matches!(import_cohort(dir.path(), &o.channels, &o.store), Err(Error::Parse { line: 2, .. })));
    }
}
