//! The seven Byzantine client behaviours.
//!
//! Data-poisoning attacks (label flipping, backdoor injection) rewrite a
//! client's training set before honest training. Model-poisoning attacks
//! (sign flip, random parameters, bit flip, Lie noise, Krum scaling) rewrite
//! the trained parameter vector before upload.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{ParamVector, Shape};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    LabelFlip,
    Backdoor,
    SignFlip,
    RandomParams,
    BitFlip,
    Lie,
    KrumScale,
}

impl AttackKind {
    pub const ALL: [AttackKind; 7] = [
        AttackKind::LabelFlip,
        AttackKind::Backdoor,
        AttackKind::SignFlip,
        AttackKind::RandomParams,
        AttackKind::BitFlip,
        AttackKind::Lie,
        AttackKind::KrumScale,
    ];

    pub fn is_data_attack(self) -> bool {
        matches!(self, AttackKind::LabelFlip | AttackKind::Backdoor)
    }

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::LabelFlip => "label_flip",
            AttackKind::Backdoor => "backdoor",
            AttackKind::SignFlip => "sign_flip",
            AttackKind::RandomParams => "random_params",
            AttackKind::BitFlip => "bit_flip",
            AttackKind::Lie => "lie",
            AttackKind::KrumScale => "krum_scale",
        }
    }

    /// Position in [`AttackKind::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown attack `{s}`")))
    }
}

/// A rectangle of pixels forced to `value` in every channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trigger {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
    pub value: f32,
}

impl Trigger {
    /// `size x size` block in the bottom-right corner at intensity 1.0.
    pub fn bottom_right(shape: Shape, size: usize) -> Self {
        Self {
            top: shape.height.saturating_sub(size),
            left: shape.width.saturating_sub(size),
            height: size,
            width: size,
            value: 1.0,
        }
    }

    fn check(&self, shape: Shape) -> Result<()> {
        if self.height == 0
            || self.width == 0
            || self.top + self.height > shape.height
            || self.left + self.width > shape.width
        {
            return Err(Error::Config(format!(
                "trigger {}x{} at ({}, {}) does not fit in {shape}",
                self.height, self.width, self.top, self.left
            )));
        }
        Ok(())
    }

    /// Stamps the trigger onto one image in place.
    pub fn apply(&self, shape: Shape, image: &mut [f32]) {
        let plane = shape.height * shape.width;
        for c in 0..shape.channels {
            for y in self.top..self.top + self.height {
                let row = c * plane + y * shape.width;
                image[row + self.left..row + self.left + self.width].fill(self.value);
            }
        }
    }
}

/// Per-attack constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackParams {
    /// Fraction of the local dataset rewritten by data-poisoning attacks.
    pub poison_fraction: f64,
    /// Bit to flip, counted from the most significant bit (0 = sign bit).
    pub bit_index: u32,
    /// Standard deviation of the Lie attack's Gaussian noise.
    pub lie_scale: f32,
    /// Support of the random-parameters attack.
    pub random_range: [f32; 2],
    /// Multiplier of the Krum attack.
    pub krum_factor: f32,
    pub backdoor_target: usize,
    /// Side length of the bottom-right backdoor block.
    pub trigger_size: usize,
}

impl Default for AttackParams {
    fn default() -> Self {
        Self {
            poison_fraction: 0.5,
            bit_index: 10,
            lie_scale: 1.0,
            random_range: [-1.0, 1.0],
            krum_factor: 0.5,
            backdoor_target: 0,
            trigger_size: 3,
        }
    }
}

impl AttackParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.poison_fraction > 0.0 && self.poison_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "poison fraction must lie in (0, 1], got {}",
                self.poison_fraction
            )));
        }
        if self.bit_index > 31 {
            return Err(Error::Config(format!("bit index {} outside [0, 31]", self.bit_index)));
        }
        let [lo, hi] = self.random_range;
        if !(lo < hi) {
            return Err(Error::Config(format!("random range [{lo}, {hi}] is empty")));
        }
        if !(self.lie_scale >= 0.0) || !self.krum_factor.is_finite() {
            return Err(Error::Config("lie scale must be >= 0 and krum factor finite".into()));
        }
        Ok(())
    }

    /// Applies a data attack to `ds`. Model attacks return `ds` unchanged.
    pub fn poison_data(&self, kind: AttackKind, ds: &LabeledDataset, seed: u64) -> Result<LabeledDataset> {
        match kind {
            AttackKind::LabelFlip => label_flip(ds, self.poison_fraction, seed),
            AttackKind::Backdoor => backdoor_inject(
                ds,
                self.poison_fraction,
                &Trigger::bottom_right(ds.shape(), self.trigger_size),
                self.backdoor_target,
                seed,
            ),
            _ => Ok(ds.clone()),
        }
    }

    /// Applies a model attack to `p`. Data attacks return `p` unchanged.
    pub fn poison_model(&self, kind: AttackKind, p: &ParamVector, seed: u64) -> Result<ParamVector> {
        match kind {
            AttackKind::SignFlip => Ok(sign_flip(p)),
            AttackKind::RandomParams => random_params(p, self.random_range[0], self.random_range[1], seed),
            AttackKind::BitFlip => bit_flip(p, self.bit_index),
            AttackKind::Lie => lie_attack(p, self.lie_scale, seed),
            AttackKind::KrumScale => krum_attack(p, self.krum_factor),
            AttackKind::LabelFlip | AttackKind::Backdoor => Ok(p.clone()),
        }
    }
}

fn poisoned_count(fraction: f64, n: usize) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("poison fraction must lie in (0, 1], got {fraction}")));
    }
    Ok(((fraction * n as f64).round() as usize).min(n))
}

/// Relabels `round(fraction * N)` samples, chosen without replacement, with a
/// label drawn uniformly from the other `L - 1` classes.
pub fn label_flip(ds: &LabeledDataset, fraction: f64, seed: u64) -> Result<LabeledDataset> {
    let classes = ds.class_count();
    if classes < 2 {
        return Err(Error::Config("label flipping needs at least two classes".into()));
    }
    let count = poisoned_count(fraction, ds.len())?;
    let mut rng = rng_from_seed(seed);
    let mut labels = ds.labels().to_vec();
    for i in sample(&mut rng, ds.len(), count) {
        let shift = rng.random_range(1..classes);
        labels[i] = (labels[i] + shift) % classes;
    }
    ds.with_labels(labels)
}

/// Stamps `trigger` onto `round(fraction * N)` samples and relabels them as
/// `target`.
pub fn backdoor_inject(
    ds: &LabeledDataset,
    fraction: f64,
    trigger: &Trigger,
    target: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    let shape = ds.shape();
    trigger.check(shape)?;
    if target >= ds.class_count() {
        return Err(Error::Config(format!(
            "backdoor target {target} outside {} classes",
            ds.class_count()
        )));
    }
    let count = poisoned_count(fraction, ds.len())?;
    let mut rng = rng_from_seed(seed);
    let mut images = ds.images().to_vec();
    let mut labels = ds.labels().to_vec();
    let v = shape.volume();
    for i in sample(&mut rng, ds.len(), count) {
        trigger.apply(shape, &mut images[i * v..(i + 1) * v]);
        labels[i] = target;
    }
    LabeledDataset::new(shape, images, labels, ds.class_count())
}

/// Negates every parameter.
pub fn sign_flip(p: &ParamVector) -> ParamVector {
    p.map(|v| -v)
}

/// Replaces every parameter with an i.i.d. draw from `U[lo, hi]`.
pub fn random_params(p: &ParamVector, lo: f32, hi: f32, seed: u64) -> Result<ParamVector> {
    let dist = Uniform::new_inclusive(lo, hi)
        .ok()
        .filter(|_| lo < hi)
        .ok_or_else(|| Error::Config(format!("random range [{lo}, {hi}] is empty")))?;
    let mut rng = rng_from_seed(seed);
    Ok(p.map(|_| dist.sample(&mut rng)))
}

/// XORs every parameter's IEEE-754 encoding with `1 << (31 - bit_index)`:
/// index 0 is the sign bit, 1..=8 the exponent, 9..=31 the mantissa.
/// NaN or infinite results are kept.
pub fn bit_flip(p: &ParamVector, bit_index: u32) -> Result<ParamVector> {
    if bit_index > 31 {
        return Err(Error::Config(format!("bit index {bit_index} outside [0, 31]")));
    }
    let mask = 1u32 << (31 - bit_index);
    Ok(p.map(|v| f32::from_bits(v.to_bits() ^ mask)))
}

/// Adds `z * g` with `g ~ N(0, 1)` i.i.d. to every parameter.
pub fn lie_attack(p: &ParamVector, z: f32, seed: u64) -> Result<ParamVector> {
    if !(z >= 0.0) {
        return Err(Error::Config(format!("noise scale must be >= 0, got {z}")));
    }
    let mut rng = rng_from_seed(seed);
    Ok(p.map(|v| {
        let g: f32 = StandardNormal.sample(&mut rng);
        v + z * g
    }))
}

/// Multiplies every parameter by `factor`.
pub fn krum_attack(p: &ParamVector, factor: f32) -> Result<ParamVector> {
    if !factor.is_finite() {
        return Err(Error::Config(format!("scale factor must be finite, got {factor}")));
    }
    Ok(p.map(|v| v * factor))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ArchId;

    fn pv(v: &[f32]) -> ParamVector {
        ParamVector::new(v.to_vec(), ArchId(1))
    }

    fn toy(n: usize, classes: usize) -> LabeledDataset {
        let shape = Shape::new(1, 4, 4);
        let images = (0..n * 16).map(|i| (i % 7) as f32 / 10.0).collect();
        let labels = (0..n).map(|i| i % classes).collect();
        LabeledDataset::new(shape, images, labels, classes).unwrap()
    }

    #[test]
    fn sign_flip_negates() {
        let out = sign_flip(&pv(&[0.5, -1.0, 0.0]));
        assert_eq!(out.values(), &[-0.5, 1.0, 0.0]);
        assert_eq!(sign_flip(&out).values(), &[0.5, -1.0, 0.0]);
    }

    #[test]
    fn bit_flip_sign_bit() {
        assert_eq!(bit_flip(&pv(&[1.0]), 0).unwrap().values(), &[-1.0]);
        assert!(bit_flip(&pv(&[1.0]), 32).is_err());
    }

    #[test]
    fn bit_flip_tenth_bit_of_one() {
        // 1.0 = 0x3F80_0000; counting from the MSB, bit 10 is the second
        // mantissa bit (weight 2^-2), so the result is 1.25.
        let out = bit_flip(&pv(&[1.0]), 10).unwrap();
        assert_eq!(out.values()[0].to_bits(), 0x3FA0_0000);
        assert_eq!(out.values(), &[1.25]);
    }

    #[test]
    fn exponent_flip_may_produce_non_finite_values() {
        // flipping the top exponent bit of 1.0 (0x3F80_0000) yields +inf,
        // of 2.0 (0x4000_0000) yields 0
        let out = bit_flip(&pv(&[1.0, 2.0]), 1).unwrap();
        assert_eq!(out.values()[0], f32::INFINITY);
        assert_eq!(out.values()[1], 0.0);
    }

    #[test]
    fn krum_scaling() {
        assert_eq!(krum_attack(&pv(&[2.0, -4.0]), 0.5).unwrap().values(), &[1.0, -2.0]);
        assert_eq!(krum_attack(&pv(&[2.0, -4.0]), 1.0).unwrap().values(), &[2.0, -4.0]);
        assert_eq!(krum_attack(&pv(&[2.0, -4.0]), 0.0).unwrap().values(), &[0.0, -0.0]);
        assert!(krum_attack(&pv(&[1.0]), f32::NAN).is_err());
    }

    #[test]
    fn random_params_support_and_determinism() {
        let p = pv(&[9.0; 1000]);
        let a = random_params(&p, -1.0, 1.0, 4).unwrap();
        assert!(a.values().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(a, random_params(&p, -1.0, 1.0, 4).unwrap());
        assert!(random_params(&p, 1.0, 1.0, 4).is_err());
    }

    #[test]
    fn lie_with_zero_scale_is_identity() {
        let p = pv(&[0.25, -3.0]);
        assert_eq!(lie_attack(&p, 0.0, 1).unwrap(), p);
        assert!(lie_attack(&p, -1.0, 1).is_err());
    }

    #[test]
    fn label_flip_binary_inverts_everything() {
        let ds = toy(10, 2);
        let out = label_flip(&ds, 1.0, 3).unwrap();
        for (a, b) in ds.labels().iter().zip(out.labels()) {
            assert_eq!(*b, 1 - *a);
        }
        assert_eq!(out.images(), ds.images());
    }

    #[test]
    fn backdoor_counts_and_locality() {
        let ds = toy(20, 4);
        let trigger = Trigger::bottom_right(ds.shape(), 3);
        let out = backdoor_inject(&ds, 0.5, &trigger, 0, 8).unwrap();
        let mut stamped = 0;
        for i in 0..ds.len() {
            if out.image(i) == ds.image(i) {
                assert_eq!(out.label(i), ds.label(i));
                continue;
            }
            stamped += 1;
            assert_eq!(out.label(i), 0);
            for y in 0..4 {
                for x in 0..4 {
                    let k = y * 4 + x;
                    if y >= 1 && x >= 1 {
                        assert_eq!(out.image(i)[k], 1.0);
                    } else {
                        assert_eq!(out.image(i)[k], ds.image(i)[k]);
                    }
                }
            }
        }
        // toy pixels never equal 1.0, so every stamped image differs
        assert_eq!(stamped, 10);
    }

    #[test]
    fn backdoor_with_vanishing_fraction_is_noop() {
        let ds = toy(10, 3);
        let out = backdoor_inject(&ds, 0.01, &Trigger::bottom_right(ds.shape(), 3), 0, 1).unwrap();
        assert_eq!(out, ds);
    }

    #[test]
    fn trigger_out_of_bounds_is_rejected() {
        let ds = toy(4, 2);
        let bad = Trigger {
            top: 2,
            left: 0,
            height: 3,
            width: 1,
            value: 1.0,
        };
        assert!(matches!(backdoor_inject(&ds, 0.5, &bad, 0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn names_round_trip() {
        for k in AttackKind::ALL {
            assert_eq!(k.name().parse::<AttackKind>().unwrap(), k);
            assert_eq!(AttackKind::ALL[k.index()], k);
        }
    }
}
