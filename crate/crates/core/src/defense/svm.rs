//! Linear SVM trained by stochastic sub-gradient descent on the hinge loss.
//!
//! Identity labels `{malicious = 0, benign = 1}` are mapped to `{-1, +1}`
//! before training; with `y = 0` the margin test `y (w·x + b) < 1` would
//! always hold and the updates would never use the label. Features are
//! standardized with the training set's mean and standard deviation, and the
//! same constants are applied at inference.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::features::Features;
use super::{FeatureSample, Identity};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvmParams {
    /// Regularization strength λ.
    pub lambda: f64,
    /// Learning rate η.
    pub eta: f64,
    /// Number of passes T over the training set.
    pub epochs: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            eta: 0.01,
            epochs: 1000,
        }
    }
}

/// Trained two-feature classifier. `decision > 0` means benign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseModel {
    pub w: [f64; 2],
    pub b: f64,
    pub mean: [f64; 2],
    pub scale: [f64; 2],
    pub params: SvmParams,
}

impl DefenseModel {
    pub fn normalize(&self, x: Features) -> [f64; 2] {
        let raw = x.as_array();
        [
            (raw[0] - self.mean[0]) / self.scale[0],
            (raw[1] - self.mean[1]) / self.scale[1],
        ]
    }

    /// `w · x̃ + b` on the standardized features.
    pub fn decision(&self, x: Features) -> f64 {
        let z = self.normalize(x);
        self.w[0] * z[0] + self.w[1] * z[1] + self.b
    }

    /// Benign only for a strictly positive decision value; zero and NaN are
    /// malicious.
    pub fn classify(&self, x: Features) -> Identity {
        if self.decision(x) > 0.0 {
            Identity::Benign
        } else {
            Identity::Malicious
        }
    }

    /// Mean hinge loss `max(0, 1 - y (w·x̃ + b))` over `samples`.
    pub fn hinge_loss(&self, samples: &[FeatureSample]) -> f64 {
        let total: f64 = samples
            .iter()
            .map(|s| (1.0 - s.y.sign() * self.decision(s.x)).max(0.0))
            .sum();
        total / samples.len().max(1) as f64
    }

    /// Fraction of `samples` whose predicted identity matches the label.
    pub fn accuracy(&self, samples: &[FeatureSample]) -> f64 {
        let hits = samples.iter().filter(|s| self.classify(s.x) == s.y).count();
        hits as f64 / samples.len().max(1) as f64
    }
}

/// Trains the defense model on `samples`. Each of the `epochs` passes visits
/// the samples in an order shuffled by a generator seeded with `seed`:
///
/// ```text
/// if y (w·x + b) < 1:  w ← w − η (λ w − y x),  b ← b + η y
/// else:                w ← w − η λ w
/// ```
///
/// The shrink factor `1 − η λ` is floored at 0: for `η λ > 2` the literal
/// update flips and grows `w` every step and diverges, while the floored one
/// keeps the intended "more regularization, smaller weights" behaviour. For
/// `η λ <= 1` the two are identical.
pub fn train_defense_svm(samples: &[FeatureSample], params: &SvmParams, seed: u64) -> Result<DefenseModel> {
    let SvmParams { lambda, eta, epochs } = *params;
    if !(lambda >= 0.0 && eta > 0.0 && epochs >= 1) {
        return Err(Error::Config(format!(
            "SVM needs lambda >= 0, eta > 0, epochs >= 1; got {lambda}, {eta}, {epochs}"
        )));
    }
    let benign = samples.iter().filter(|s| s.y == Identity::Benign).count();
    if benign == 0 || benign == samples.len() {
        return Err(Error::Training(
            "defense training set must contain both benign and malicious samples".into(),
        ));
    }
    if samples.iter().any(|s| !(s.x.mse.is_finite() && s.x.tcd.is_finite())) {
        return Err(Error::Training("non-finite shadow features".into()));
    }

    let n = samples.len() as f64;
    let mut mean = [0.0; 2];
    let mut scale = [0.0; 2];
    for k in 0..2 {
        mean[k] = samples.iter().map(|s| s.x.as_array()[k]).sum::<f64>() / n;
        let var = samples
            .iter()
            .map(|s| (s.x.as_array()[k] - mean[k]).powi(2))
            .sum::<f64>()
            / n;
        scale[k] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    let mut model = DefenseModel {
        w: [0.0; 2],
        b: 0.0,
        mean,
        scale,
        params: *params,
    };
    let data: Vec<([f64; 2], f64)> = samples
        .iter()
        .map(|s| (model.normalize(s.x), s.y.sign()))
        .collect();

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = rng_from_seed(seed);
    let (mut w, mut b) = ([0.0f64; 2], 0.0f64);
    let decay = (1.0 - eta * lambda).max(0.0);
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let (x, y) = data[i];
            let margin = y * (w[0] * x[0] + w[1] * x[1] + b);
            if margin < 1.0 {
                for k in 0..2 {
                    w[k] = decay * w[k] + eta * y * x[k];
                }
                b += eta * y;
            } else {
                for wk in &mut w {
                    *wk *= decay;
                }
            }
        }
    }
    model.w = w;
    model.b = b;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(mse: f64, tcd: f64, y: Identity) -> FeatureSample {
        FeatureSample {
            x: Features { mse, tcd },
            y,
        }
    }

    fn separable() -> Vec<FeatureSample> {
        let mut v = Vec::new();
        for _ in 0..20 {
            v.push(sample(0.0, 0.0, Identity::Benign));
            v.push(sample(10.0, 10.0, Identity::Malicious));
        }
        v
    }

    #[test]
    fn separable_toy_set_is_learned() {
        let m = train_defense_svm(&separable(), &SvmParams::default(), 1).unwrap();
        assert_eq!(m.accuracy(&separable()), 1.0);
        assert_eq!(m.classify(Features::default()), Identity::Benign);
    }

    #[test]
    fn strong_regularization_shrinks_weights() {
        let norm = |m: &DefenseModel| m.w[0].hypot(m.w[1]);
        let weak = SvmParams {
            lambda: 0.001,
            eta: 0.01,
            epochs: 200,
        };
        let strong = SvmParams { lambda: 1e3, ..weak };
        let a = train_defense_svm(&separable(), &weak, 3).unwrap();
        let b = train_defense_svm(&separable(), &strong, 3).unwrap();
        assert!(norm(&b) < norm(&a), "{} vs {}", norm(&b), norm(&a));
    }

    #[test]
    fn single_class_is_a_training_error() {
        let only_benign = vec![sample(0.0, 0.0, Identity::Benign); 4];
        assert!(matches!(
            train_defense_svm(&only_benign, &SvmParams::default(), 0),
            Err(Error::Training(_))
        ));
    }

    #[test]
    fn unregularized_loop_reaches_zero_hinge_loss() {
        let data = vec![
            sample(0.01, 0.02, Identity::Benign),
            sample(0.02, 0.01, Identity::Benign),
            sample(0.00, 0.03, Identity::Benign),
            sample(0.30, 0.40, Identity::Malicious),
            sample(0.05, 0.20, Identity::Malicious),
            sample(0.50, 0.10, Identity::Malicious),
        ];
        let params = SvmParams {
            lambda: 0.0,
            eta: 0.05,
            epochs: 5000,
        };
        let m = train_defense_svm(&data, &params, 4).unwrap();
        assert_eq!(m.hinge_loss(&data), 0.0);
    }

    #[test]
    fn zero_decision_is_malicious() {
        let m = DefenseModel {
            w: [0.0, 0.0],
            b: 0.0,
            mean: [0.0; 2],
            scale: [1.0; 2],
            params: SvmParams::default(),
        };
        assert_eq!(m.classify(Features::default()), Identity::Malicious);
    }
}
