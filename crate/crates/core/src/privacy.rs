//! Differential privacy for client updates: L2 clipping of the whole
//! flattened update, Gaussian noise with standard deviation `σC`, and a
//! Gaussian-mechanism accountant with basic composition.
//!
//! The accountant is a deliberately loose upper bound; it does not model
//! subsampling amplification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamVector;
use crate::numcore::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpConfig {
    pub clip_norm: f64,
    pub noise_multiplier: f64,
    pub delta: f64,
    pub enabled: bool,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self { clip_norm: 1.0, noise_multiplier: 0.01, delta: 1e-5, enabled: true }
    }
}

impl DpConfig {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return Err(Error::Config(format!("clip_norm must be positive, got {}", self.clip_norm)));
        }
        if !(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite()) {
            return Err(Error::Config(format!("noise_multiplier must be nonnegative, got {}", self.noise_multiplier)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        Ok(())
    }

    /// Clips and noises `g` when enabled; returns `g` untouched otherwise.
    pub fn privatize(&self, g: &ParamVector, rng: &mut Rng) -> Result<ParamVector> {
        if !self.enabled {
            return Ok(g.clone());
        }
        let clipped = clip(g, self.clip_norm)?;
        Ok(add_noise(&clipped, self.noise_multiplier, self.clip_norm, rng))
    }
}

/// Cumulative privacy loss after composing a number of releases.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacySpent {
    /// `f64::INFINITY` when noise is zero and at least one round was released.
    pub epsilon: f64,
    pub rounds_composed: u64,
}

impl PrivacySpent {
    pub fn is_bounded(&self) -> bool {
        self.epsilon.is_finite()
    }
}

/// Scales `g` by `min(1, C/‖g‖₂)`.
pub fn clip(g: &ParamVector, clip_norm: f64) -> Result<ParamVector> {
    if !(clip_norm > 0.0) {
        return Err(Error::Config(format!("clip norm must be positive, got {clip_norm}")));
    }
    if !g.is_finite() {
        return Err(Error::Input("cannot clip a non-finite vector".into()));
    }
    let norm = g.l2_norm();
    let mut out = g.clone();
    if norm > clip_norm {
        out.scale(clip_norm / norm);
        // Rounding can leave the norm a hair above the bound.
        while out.l2_norm() > clip_norm {
            out.scale(1.0 - f64::EPSILON);
        }
    }
    Ok(out)
}

/// Adds i.i.d. `N(0, (σC)²)` noise to every coordinate.
pub fn add_noise(g: &ParamVector, sigma: f64, clip_norm: f64, rng: &mut Rng) -> ParamVector {
    let mut out = g.clone();
    if sigma == 0.0 {
        return out;
    }
    let std = sigma * clip_norm;
    for v in out.as_mut_slice() {
        *v += rng.gaussian(0.0, std);
    }
    out
}

/// Per-release epsilon of the classical Gaussian mechanism.
pub fn epsilon_per_round(sigma: f64, delta: f64) -> f64 {
    if sigma == 0.0 {
        return f64::INFINITY;
    }
    (2.0 * (1.25 / delta).ln()).sqrt() / sigma
}

/// Total epsilon under basic composition of `rounds` releases.
pub fn epsilon_spent(sigma: f64, delta: f64, rounds: u64) -> Result<PrivacySpent> {
    if !(sigma >= 0.0) {
        return Err(Error::Config(format!("noise multiplier must be nonnegative, got {sigma}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!("delta must lie in (0, 1), got {delta}")));
    }
    let epsilon = if rounds == 0 { 0.0 } else { rounds as f64 * epsilon_per_round(sigma, delta) };
    Ok(PrivacySpent { epsilon, rounds_composed: rounds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ParamLayout;
    use crate::numcore::Rng;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn vector(values: &[f64]) -> ParamVector {
        let mut layout = ParamLayout::new();
        layout.push("v", 1, values.len());
        ParamVector::from_flat(Arc::new(layout), values.to_vec()).unwrap()
    }

    #[test]
    fn clip_examples() {
        let small = vector(&[0.3, 0.4]);
        assert_eq!(clip(&small, 1.0).unwrap(), small);
        let big = vector(&[3.0, 4.0]);
        let c = clip(&big, 1.0).unwrap();
        assert!((c.as_slice()[0] - 0.6).abs() < 1e-15);
        assert!((c.as_slice()[1] - 0.8).abs() < 1e-15);
        assert!(matches!(clip(&big, 0.0), Err(Error::Config(_))));
        assert!(matches!(clip(&big, -1.0), Err(Error::Config(_))));
    }

    #[test]
    fn clip_bounds_norm_and_keeps_direction() {
        let mut rng = Rng::new(1);
        for _ in 0..1000 {
            let n = 1 + rng.below(20);
            let scale = rng.uniform_range(0.01, 100.0);
            let g = vector(&(0..n).map(|_| rng.normal() * scale).collect::<Vec<_>>());
            let c = rng.uniform_range(0.1, 5.0);
            let out = clip(&g, c).unwrap();
            assert!(out.l2_norm() <= c + 1e-12);
            let cos: f64 = g.as_slice().iter().zip(out.as_slice()).map(|(a, b)| a * b).sum::<f64>()
                / (g.l2_norm() * out.l2_norm());
            assert!((cos - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_noise_is_identity() {
        let g = vector(&[1.0, -2.0, 3.5]);
        let mut rng = Rng::new(2);
        assert_eq!(add_noise(&g, 0.0, 1.0, &mut rng), g);
    }

    #[test]
    fn noise_moments_match_target() {
        let mut rng = Rng::new(3);
        let base = vector(&[0.5, -1.0, 2.0]);
        let (sigma, c) = (0.7, 1.3);
        let draws = 100_000;
        let mut sum = [0.0; 3];
        let mut sq = [0.0; 3];
        for _ in 0..draws {
            let out = add_noise(&base, sigma, c, &mut rng);
            for i in 0..3 {
                let z = out.as_slice()[i] - base.as_slice()[i];
                sum[i] += z;
                sq[i] += z * z;
            }
        }
        let target = sigma * c;
        for i in 0..3 {
            let mean = sum[i] / draws as f64;
            let std = (sq[i] / draws as f64 - mean * mean).sqrt();
            assert!(mean.abs() < 3.0 * target / (draws as f64).sqrt(), "mean {mean}");
            assert!((std - target).abs() / target < 0.05, "std {std}");
        }
    }

    #[test]
    fn accountant_examples() {
        assert_eq!(epsilon_spent(1.0, 1e-5, 0).unwrap().epsilon, 0.0);
        let one = epsilon_spent(4.8414, 1e-5, 1).unwrap().epsilon;
        assert!((one - 1.0).abs() < 1e-3, "{one}");
        let oracle = (2.0 * (1.25f64 / 1e-5).ln()).sqrt() / 4.8414;
        assert!((one - oracle).abs() < 1e-12);
        let a = epsilon_spent(2.0, 1e-5, 7).unwrap().epsilon;
        let b = epsilon_spent(2.0, 1e-5, 14).unwrap().epsilon;
        assert!((b - 2.0 * a).abs() < 1e-12);
        let inf = epsilon_spent(0.0, 1e-5, 3).unwrap();
        assert!(!inf.is_bounded());
        assert_eq!(epsilon_spent(0.0, 1e-5, 0).unwrap().epsilon, 0.0);
        assert!(epsilon_spent(1.0, 1.5, 1).is_err());
    }

    #[test]
    fn disabled_privatize_is_identity() {
        let g = vector(&[10.0, -20.0]);
        let mut rng = Rng::new(4);
        assert_eq!(DpConfig::disabled().privatize(&g, &mut rng).unwrap(), g);
        let zero_noise = DpConfig { noise_multiplier: 0.0, clip_norm: 100.0, ..DpConfig::default() };
        assert_eq!(zero_noise.privatize(&g, &mut rng).unwrap(), g);
    }

    proptest! {
        #[test]
        fn clip_is_idempotent_and_bounded(values in prop::collection::vec(-1e3f64..1e3, 1..30), c in 0.01f64..10.0) {
            let g = vector(&values);
            let once = clip(&g, c).unwrap();
            let twice = clip(&once, c).unwrap();
            prop_assert!(once.l2_norm() <= c + 1e-12);
            for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
            if g.l2_norm() <= c {
                prop_assert_eq!(once, g);
            }
        }

        #[test]
        fn epsilon_monotone(sigma in 0.1f64..10.0, extra in 0.0f64..5.0, rounds in 0u64..100, more in 0u64..100) {
            let base = epsilon_spent(sigma, 1e-5, rounds).unwrap().epsilon;
            prop_assert!(epsilon_spent(sigma, 1e-5, rounds + more).unwrap().epsilon >= base);
            prop_assert!(epsilon_spent(sigma + extra, 1e-5, rounds).unwrap().epsilon <= base);
        }
    }
}
