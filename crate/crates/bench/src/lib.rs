//! Fixtures shared by the benchmarks.

use fedguard_core::data::{synth_dataset, SynthSpec};
use fedguard_core::{LabeledDataset, ModelArch, Network, ParamVector, Shape};

/// A 1x12x12, 10-class synthetic dataset with `per_class` samples per class.
pub fn dataset(per_class: usize) -> LabeledDataset {
    synth_dataset(&SynthSpec::new(10, per_class, Shape::new(1, 12, 12)), 1).expect("valid synthetic spec")
}

/// The desk-scale MLP used by the experiments.
pub fn mlp() -> Network {
    Network::new(ModelArch::mlp(Shape::new(1, 12, 12), &[64], 10).expect("valid architecture"))
}

/// A small convolutional network on the same input.
pub fn cnn() -> Network {
    Network::new(ModelArch::conv_net(Shape::new(1, 12, 12), (4, 8), 32, 10).expect("valid architecture"))
}

/// `n` independently initialized models.
pub fn models(net: &Network, n: usize) -> Vec<ParamVector> {
    (0..n as u64).map(|s| net.init(s)).collect()
}
