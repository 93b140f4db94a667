use crate::error::{Error, Result};
use crate::kgraph::{EntityId, KgStore};
use crate::numcore::Tensor;

/// Length of the observation window in hours.
pub const WINDOW_HOURS: f64 = 48.0;

/// One patient's observation window.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeWindow {
    pub patient_id: u64,
    /// Hours since window start, non-decreasing, within `[0, 48]`.
    pub timestamps: Vec<f64>,
    /// `T × F` channel values. Before preprocessing a missing value is NaN.
    pub values: Tensor,
    /// `T × F` row-major; `true` where the value was actually measured.
    pub observed_mask: Vec<bool>,
    /// Knowledge-graph entities linked to this patient's recorded findings.
    pub feature_entities: Vec<EntityId>,
    /// 1 when sepsis onset falls within the prediction horizon.
    pub label: u8,
}

impl EpisodeWindow {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn feature_count(&self) -> usize {
        self.values.cols()
    }

    pub fn observed(&self, t: usize, c: usize) -> bool {
        self.observed_mask[t * self.feature_count() + c]
    }

    /// A step counts for pooling when at least one channel was measured.
    pub fn step_observed(&self, t: usize) -> bool {
        let f = self.feature_count();
        self.observed_mask[t * f..(t + 1) * f].iter().any(|&m| m)
    }

    pub fn validate(&self, store: Option<&KgStore>) -> Result<()> {
        if self.values.rows() != self.len() || self.observed_mask.len() != self.values.len() {
            return Err(Error::Input(format!("patient {}: inconsistent window shapes", self.patient_id)));
        }
        check_timestamps(&self.timestamps)?;
        if self.timestamps.iter().any(|&t| !(0.0..=WINDOW_HOURS).contains(&t)) {
            return Err(Error::Input(format!("patient {}: timestamp outside the window", self.patient_id)));
        }
        for (v, &m) in self.values.data().iter().zip(&self.observed_mask) {
            if m && !v.is_finite() {
                return Err(Error::Input(format!("patient {}: observed value is not finite", self.patient_id)));
            }
        }
        if let Some(store) = store {
            for &e in &self.feature_entities {
                store.check_entity(e)?;
            }
        }
        if self.label > 1 {
            return Err(Error::Input(format!("patient {}: label must be 0 or 1", self.patient_id)));
        }
        Ok(())
    }
}

pub(crate) fn check_timestamps(times: &[f64]) -> Result<()> {
    if times.windows(2).any(|w| w[1] < w[0]) || times.iter().any(|t| !t.is_finite()) {
        return Err(Error::Input("timestamps must be finite and non-decreasing".into()));
    }
    Ok(())
}
