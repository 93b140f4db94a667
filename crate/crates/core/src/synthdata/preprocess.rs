//! Forward-fill and z-score normalization with training-split statistics.

use serde::{Deserialize, Serialize};

use super::window::EpisodeWindow;
use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Below this a channel's training variance counts as zero.
const MIN_STD: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    /// Value used before a channel's first measurement: the mean of the
    /// measured training values.
    pub fill: Vec<f64>,
    pub mean: Vec<f64>,
    /// Unit scale is used for channels without training variance.
    pub std: Vec<f64>,
}

/// Carries each channel's last measurement forward; leading gaps take `fill`.
pub fn forward_fill(window: &EpisodeWindow, fill: &[f64]) -> Tensor {
    let f = window.feature_count();
    let mut out = window.values.clone();
    for c in 0..f {
        let mut last = fill[c];
        for t in 0..window.len() {
            let v = window.values.get(t, c);
            if v.is_finite() {
                last = v;
            } else {
                out.set(t, c, last);
            }
        }
    }
    out
}

pub fn fit_norm_stats(train: &[&EpisodeWindow]) -> Result<NormStats> {
    let first = train.first().ok_or_else(|| Error::Input("normalization needs training windows".into()))?;
    let f = first.feature_count();
    let mut sum = vec![0.0; f];
    let mut count = vec![0usize; f];
    for w in train {
        if w.feature_count() != f {
            return Err(Error::Input("training windows disagree on channel count".into()));
        }
        for t in 0..w.len() {
            for c in 0..f {
                let v = w.values.get(t, c);
                if v.is_finite() {
                    sum[c] += v;
                    count[c] += 1;
                }
            }
        }
    }
    let fill: Vec<f64> = (0..f).map(|c| if count[c] > 0 { sum[c] / count[c] as f64 } else { 0.0 }).collect();
    let filled: Vec<Tensor> = train.iter().map(|w| forward_fill(w, &fill)).collect();
    let n: usize = filled.iter().map(|x| x.rows()).sum();
    let mut mean = vec![0.0; f];
    for x in &filled {
        for t in 0..x.rows() {
            for (m, v) in mean.iter_mut().zip(x.row(t)) {
                *m += v;
            }
        }
    }
    mean.iter_mut().for_each(|m| *m /= n.max(1) as f64);
    let mut var = vec![0.0; f];
    for x in &filled {
        for t in 0..x.rows() {
            for c in 0..f {
                var[c] += (x.get(t, c) - mean[c]).powi(2);
            }
        }
    }
    let std = var
        .iter()
        .map(|v| {
            let s = (v / n.max(1) as f64).sqrt();
            if s > MIN_STD {
                s
            } else {
                1.0
            }
        })
        .collect();
    Ok(NormStats { fill, mean, std })
}

/// Forward-fills and z-scores a raw window; the observation mask is kept.
pub fn preprocess(raw: &EpisodeWindow, stats: &NormStats) -> Result<EpisodeWindow> {
    let f = raw.feature_count();
    if stats.mean.len() != f {
        return Err(Error::Input(format!(
            "patient {}: window has {f} channels, statistics have {}",
            raw.patient_id,
            stats.mean.len()
        )));
    }
    let mut values = forward_fill(raw, &stats.fill);
    for t in 0..values.rows() {
        for (c, v) in values.row_mut(t).iter_mut().enumerate() {
            *v = (*v - stats.mean[c]) / stats.std[c];
        }
    }
    Ok(EpisodeWindow { values, ..raw.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;

    fn window(values: Vec<f64>, f: usize) -> EpisodeWindow {
        let steps = values.len() / f;
        let observed_mask = values.iter().map(|v| v.is_finite()).collect();
        EpisodeWindow {
            patient_id: 0,
            timestamps: (0..steps).map(|t| t as f64).collect(),
            values: Tensor::new(vec![steps, f], values).unwrap(),
            observed_mask,
            feature_entities: vec![],
            label: 0,
        }
    }

    fn random_window(rng: &mut Rng, f: usize) -> EpisodeWindow {
        let steps = 1 + rng.below(12);
        let values = (0..steps * f)
            .map(|_| if rng.bernoulli(0.3) { f64::NAN } else { 5.0 + 3.0 * rng.normal() })
            .collect();
        window(values, f)
    }

    #[test]
    fn forward_fill_example() {
        let w = window(vec![1.0, f64::NAN, f64::NAN, 4.0], 1);
        assert_eq!(forward_fill(&w, &[0.0]).data(), &[1.0, 1.0, 1.0, 4.0]);
        let lead = window(vec![f64::NAN, 2.0], 1);
        assert_eq!(forward_fill(&lead, &[7.5]).data(), &[7.5, 2.0]);
    }

    #[test]
    fn complete_window_is_plain_z_score() {
        let w = window(vec![1.0, 10.0, 3.0, 20.0, 5.0, 30.0], 2);
        let stats = fit_norm_stats(&[&w]).unwrap();
        let out = preprocess(&w, &stats).unwrap();
        assert!(out.observed_mask.iter().all(|&m| m));
        let sd0 = (8.0f64 / 3.0).sqrt();
        assert!((out.values.get(0, 0) - (1.0 - 3.0) / sd0).abs() < 1e-12);
        assert!((out.values.get(2, 1) - (30.0 - 20.0) / (200.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn train_statistics_standardize_train_split() {
        let mut rng = Rng::new(8);
        let train: Vec<EpisodeWindow> = (0..40).map(|_| random_window(&mut rng, 3)).collect();
        let refs: Vec<&EpisodeWindow> = train.iter().collect();
        let stats = fit_norm_stats(&refs).unwrap();
        let out: Vec<EpisodeWindow> = train.iter().map(|w| preprocess(w, &stats).unwrap()).collect();
        for c in 0..3 {
            let vals: Vec<f64> = out.iter().flat_map(|w| (0..w.len()).map(move |t| w.values.get(t, c))).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            assert!(mean.abs() < 1e-9 && (std - 1.0).abs() < 1e-9);
        }
        let test: Vec<EpisodeWindow> = (0..30)
            .map(|_| {
                let mut w = random_window(&mut rng, 3);
                w.values = w.values.map(|v| v + 4.0);
                preprocess(&w, &stats).unwrap()
            })
            .collect();
        let vals: Vec<f64> = test.iter().flat_map(|w| (0..w.len()).map(move |t| w.values.get(t, 0))).collect();
        assert!(vals.iter().sum::<f64>() / vals.len() as f64 > 0.5);
    }

    #[test]
    fn zero_variance_channel_uses_unit_scale() {
        let w = window(vec![2.0, 2.0, 2.0], 1);
        let stats = fit_norm_stats(&[&w]).unwrap();
        assert_eq!(stats.std, vec![1.0]);
        assert_eq!(preprocess(&w, &stats).unwrap().values.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn preprocessing_is_idempotent() {
        let mut rng = Rng::new(9);
        let train: Vec<EpisodeWindow> = (0..20).map(|_| random_window(&mut rng, 2)).collect();
        let refs: Vec<&EpisodeWindow> = train.iter().collect();
        let once: Vec<EpisodeWindow> =
            train.iter().map(|w| preprocess(w, &fit_norm_stats(&refs).unwrap()).unwrap()).collect();
        let refs2: Vec<&EpisodeWindow> = once.iter().collect();
        let stats2 = fit_norm_stats(&refs2).unwrap();
        for w in &once {
            let twice = preprocess(w, &stats2).unwrap();
            assert_eq!(twice.observed_mask, w.observed_mask);
            for (a, b) in twice.values.data().iter().zip(w.values.data()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn channel_mismatch_rejected() {
        let w = window(vec![1.0, 2.0], 2);
        let stats = NormStats { fill: vec![0.0], mean: vec![0.0], std: vec![1.0] };
        assert!(preprocess(&w, &stats).is_err());
    }
}
