//! Difficulty check for a generated cohort: a logistic regression on the
//! per-channel least-squares slope over the final 12 hours.

use super::cohort::{Cohort, TREND_HOURS};
use super::preprocess::{fit_norm_stats, preprocess};
use super::window::{EpisodeWindow, WINDOW_HOURS};
use crate::error::{Error, Result};
use crate::evalcli::metrics::auc;
use crate::numcore::ops::sigmoid_scalar;
use crate::numcore::Rng;

/// Slope of each channel against time over measured values in the final
/// 12 hours; 0 for channels with fewer than two such measurements.
pub fn trend_features(window: &EpisodeWindow) -> Vec<f64> {
    let start = WINDOW_HOURS - TREND_HOURS;
    (0..window.feature_count())
        .map(|c| {
            let pts: Vec<(f64, f64)> = (0..window.len())
                .filter(|&t| window.timestamps[t] >= start && window.observed(t, c))
                .map(|t| (window.timestamps[t], window.values.get(t, c)))
                .collect();
            let n = pts.len() as f64;
            if pts.len() < 2 {
                return 0.0;
            }
            let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
            let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
            let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
            if sxx > 0.0 {
                sxy / sxx
            } else {
                0.0
            }
        })
        .collect()
}

/// Logistic regression fitted by full-batch gradient descent on
/// standardized features.
#[derive(Clone, Debug)]
pub struct LogisticModel {
    mean: Vec<f64>,
    std: Vec<f64>,
    weights: Vec<f64>,
    bias: f64,
}

impl LogisticModel {
    pub fn fit(x: &[Vec<f64>], y: &[u8], iterations: usize, lr: f64) -> Result<Self> {
        let d = x.first().ok_or_else(|| Error::Input("logistic fit needs data".into()))?.len();
        let n = x.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let std: Vec<f64> = (0..d)
            .map(|j| {
                let s = (x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        let z: Vec<Vec<f64>> = x.iter().map(|r| (0..d).map(|j| (r[j] - mean[j]) / std[j]).collect()).collect();
        let mut weights = vec![0.0; d];
        let mut bias = 0.0;
        for _ in 0..iterations {
            let mut gw = vec![0.0; d];
            let mut gb = 0.0;
            for (row, &label) in z.iter().zip(y) {
                let p = sigmoid_scalar(row.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>() + bias);
                let e = p - f64::from(label);
                gb += e;
                for (g, v) in gw.iter_mut().zip(row) {
                    *g += e * v;
                }
            }
            bias -= lr * gb / n;
            for (w, g) in weights.iter_mut().zip(&gw) {
                *w -= lr * g / n;
            }
        }
        Ok(Self { mean, std, weights, bias })
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        let logit: f64 =
            x.iter().enumerate().map(|(j, v)| (v - self.mean[j]) / self.std[j] * self.weights[j]).sum::<f64>() + self.bias;
        sigmoid_scalar(logit)
    }
}

/// Held-out AUC of the trend-slope logistic baseline on a random split.
pub fn trend_baseline_auc(cohort: &Cohort, holdout: f64, rng: &mut Rng) -> Result<f64> {
    let mut idx: Vec<usize> = (0..cohort.len()).collect();
    rng.shuffle(&mut idx);
    let n_test = ((holdout * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
    let (test, train) = idx.split_at(n_test);
    let train_w: Vec<&EpisodeWindow> = train.iter().map(|&i| &cohort.windows[i]).collect();
    let stats = fit_norm_stats(&train_w)?;
    let feats = |ids: &[usize]| -> Result<(Vec<Vec<f64>>, Vec<u8>)> {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for &i in ids {
            let w = preprocess(&cohort.windows[i], &stats)?;
            x.push(trend_features(&w));
            y.push(w.label);
        }
        Ok((x, y))
    };
    let (xtr, ytr) = feats(train)?;
    let (xte, yte) = feats(test)?;
    let model = LogisticModel::fit(&xtr, &ytr, 300, 0.5)?;
    let scores: Vec<f64> = xte.iter().map(|r| model.score(r)).collect();
    auc(&scores, &yte)
}
