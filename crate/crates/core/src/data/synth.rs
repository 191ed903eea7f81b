//! Deterministic Gaussian-blob image classes.
//!
//! Class `c` owns one blob location on a `g x g` grid spread over the image
//! (`g = ceil(sqrt(classes))`). Each sample draws a jittered centre, a random
//! amplitude and per-pixel background noise, then clips to `[0, 1]`. Adjacent
//! locations overlap enough that the task is learnable but not trivial.

use rand::Rng;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::Shape;
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub classes: usize,
    pub per_class: usize,
    pub shape: Shape,
    /// Standard deviation of the blob centre, in pixels.
    pub jitter: f64,
    /// Standard deviation of the additive pixel noise.
    pub noise: f64,
}

impl SynthSpec {
    pub fn new(classes: usize, per_class: usize, shape: Shape) -> Self {
        Self {
            classes,
            per_class,
            shape,
            jitter: 0.9,
            noise: 0.15,
        }
    }
}

/// Generates `per_class` samples of every class, shuffled.
pub fn synth_dataset(spec: &SynthSpec, seed: u64) -> Result<LabeledDataset> {
    let SynthSpec {
        classes,
        per_class,
        shape,
        jitter,
        noise,
    } = *spec;
    if classes < 2 || per_class < 1 {
        return Err(Error::Config(format!(
            "synthetic data needs at least 2 classes and 1 sample per class, got {classes} x {per_class}"
        )));
    }
    if shape.volume() == 0 {
        return Err(Error::Config("synthetic image shape has zero volume".into()));
    }
    let grid = (classes as f64).sqrt().ceil() as usize;
    let (h, w) = (shape.height as f64, shape.width as f64);
    let centres: Vec<(f64, f64)> = (0..classes)
        .map(|c| {
            let (row, col) = (c / grid, c % grid);
            (
                (row as f64 + 0.5) * h / grid as f64 - 0.5,
                (col as f64 + 0.5) * w / grid as f64 - 0.5,
            )
        })
        .collect();
    let spread = 0.35 * h.min(w) / grid as f64 + 0.5;

    let mut rng = rng_from_seed(seed);
    let mut labels: Vec<usize> = (0..classes).flat_map(|c| std::iter::repeat_n(c, per_class)).collect();
    labels.shuffle(&mut rng);

    let pos = Normal::new(0.0, jitter.max(1e-12)).map_err(|e| Error::Config(e.to_string()))?;
    let pix = Normal::new(0.0, noise.max(1e-12)).map_err(|e| Error::Config(e.to_string()))?;
    let mut images = Vec::with_capacity(labels.len() * shape.volume());
    for &label in &labels {
        let (cy, cx) = centres[label];
        let cy = cy + pos.sample(&mut rng);
        let cx = cx + pos.sample(&mut rng);
        let amp: f64 = rng.random_range(0.6..1.0);
        for _ in 0..shape.channels {
            for y in 0..shape.height {
                for x in 0..shape.width {
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    let v = amp * (-d2 / (2.0 * spread * spread)).exp() + pix.sample(&mut rng);
                    images.push(v.clamp(0.0, 1.0) as f32);
                }
            }
        }
    }
    LabeledDataset::new(shape, images, labels, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_balanced() {
        let spec = SynthSpec::new(2, 10, Shape::new(1, 6, 6));
        let a = synth_dataset(&spec, 4).unwrap();
        assert_eq!(a, synth_dataset(&spec, 4).unwrap());
        assert_ne!(a, synth_dataset(&spec, 5).unwrap());
        assert_eq!(a.class_histogram(), vec![10, 10]);
        assert!(a.images().iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn rejects_degenerate_specs() {
        assert!(synth_dataset(&SynthSpec::new(1, 10, Shape::flat(4)), 0).is_err());
        assert!(synth_dataset(&SynthSpec::new(3, 0, Shape::flat(4)), 0).is_err());
    }
}
