//! Experiment configuration, read from TOML.
//!
//! Every section rejects unknown keys. Omitted keys take the defaults below,
//! which describe a full-scale run: 30 clients, 30 rounds, 10 local
//! epochs, batch 32, learning rate 0.01, 100 shadow models, replication 100,
//! Dirichlet α = 0.01.
//!
//! ```toml
//! rng_seed = 7
//! rounds = 10
//! aggregator = "fedguard"
//! byz_fraction = 0.5
//!
//! [dataset]
//! kind = "synthetic"
//! classes = 10
//! train_per_class = 400
//! test_per_class = 100
//! shape = { channels = 1, height = 12, width = 12 }
//!
//! [model]
//! kind = "mlp"
//! hidden = [32]
//!
//! [partition]
//! mode = "dirichlet"
//! alpha = 0.01
//! clients = 10
//!
//! [defense]
//! shadows = 20
//! shadow_training = { epochs = 20, batch_size = 32, learning_rate = 0.05 }
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::AggregatorKind;
use crate::attacks::{AttackKind, AttackParams};
use crate::data::{load_idx, synth_dataset, LabeledDataset, PartitionMode, SynthSpec};
use crate::defense::{ShadowConfig, SvmParams};
use crate::error::{Error, Result};
use crate::nn::{ModelArch, Shape, TrainConfig};
use crate::rng::{derive_seed, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub rng_seed: u64,
    pub rounds: usize,
    pub aggregator: AggregatorKind,
    pub byz_fraction: f64,
    /// Byzantine count assumed by Bulyan and LFR; defaults to the true count.
    pub f_estimate: Option<usize>,
    /// Byzantine fractions visited by a sweep.
    pub sweep_byz_fractions: Vec<f64>,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub partition: PartitionSettings,
    pub training: TrainConfig,
    pub public: PublicSettings,
    pub attacks: AttackSettings,
    pub defense: DefenseSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            rng_seed: 0,
            rounds: 30,
            aggregator: AggregatorKind::FedGuard,
            byz_fraction: 0.0,
            f_estimate: None,
            sweep_byz_fractions: (0..10).map(|i| f64::from(i) / 10.0).collect(),
            dataset: DatasetSpec::default(),
            model: ModelSpec::default(),
            partition: PartitionSettings::default(),
            training: TrainConfig::default(),
            public: PublicSettings::default(),
            attacks: AttackSettings::default(),
            defense: DefenseSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Gaussian-blob images generated on the fly.
    Synthetic {
        classes: usize,
        train_per_class: usize,
        test_per_class: usize,
        shape: Shape,
        #[serde(default = "default_jitter")]
        jitter: f64,
        #[serde(default = "default_noise")]
        noise: f64,
    },
    /// IDX files (the MNIST / FashionMNIST distribution format). The
    /// optional limits keep the first samples of each split.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
}

fn default_jitter() -> f64 {
    0.5
}

fn default_noise() -> f64 {
    0.08
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic {
            classes: 10,
            train_per_class: 400,
            test_per_class: 100,
            shape: Shape::new(1, 12, 12),
            jitter: default_jitter(),
            noise: default_noise(),
        }
    }
}

impl DatasetSpec {
    /// Loads or generates the train and test splits.
    pub fn load(&self, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
        match self {
            DatasetSpec::Synthetic {
                classes,
                train_per_class,
                test_per_class,
                shape,
                jitter,
                noise,
            } => {
                let spec = |per_class| SynthSpec {
                    classes: *classes,
                    per_class,
                    shape: *shape,
                    jitter: *jitter,
                    noise: *noise,
                };
                let train = synth_dataset(&spec(*train_per_class), derive_seed(seed, &[stream::SYNTH_TRAIN]))?;
                let test = synth_dataset(&spec(*test_per_class), derive_seed(seed, &[stream::SYNTH_TEST]))?;
                Ok((train, test))
            }
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                train_limit,
                test_limit,
            } => {
                let mut train = load_idx(train_images, train_labels)?;
                let mut test = load_idx(test_images, test_labels)?;
                if let Some(n) = train_limit {
                    train = train.take(*n);
                }
                if let Some(n) = test_limit {
                    test = test.take(*n);
                }
                let classes = train.class_count().max(test.class_count());
                Ok((train.with_class_count(classes)?, test.with_class_count(classes)?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Mlp { hidden: Vec<usize> },
    /// Two 3x3 conv/pool stages and two dense layers.
    Cnn { channels: [usize; 2], hidden: usize },
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Mlp { hidden: vec![64] }
    }
}

impl ModelSpec {
    pub fn build(&self, input: Shape, classes: usize) -> Result<ModelArch> {
        match self {
            ModelSpec::Mlp { hidden } => ModelArch::mlp(input, hidden, classes),
            ModelSpec::Cnn { channels, hidden } => {
                ModelArch::conv_net(input, (channels[0], channels[1]), *hidden, classes)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionSettings {
    pub mode: PartitionMode,
    pub alpha: f64,
    pub clients: usize,
}

impl Default for PartitionSettings {
    fn default() -> Self {
        Self {
            mode: PartitionMode::Dirichlet,
            alpha: 0.01,
            clients: 30,
        }
    }
}

impl PartitionSettings {
    /// The α reported in outputs: infinite for IID partitions.
    pub fn effective_alpha(&self) -> f64 {
        match self.mode {
            PartitionMode::Iid => f64::INFINITY,
            PartitionMode::Dirichlet => self.alpha,
        }
    }
}

/// The public dataset: a stratified seed sample of the training split
/// replicated `replication` times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PublicSettings {
    pub seed_fraction: f64,
    pub replication: usize,
}

impl Default for PublicSettings {
    fn default() -> Self {
        Self {
            seed_fraction: 0.0001,
            replication: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSettings {
    pub catalog: Vec<AttackKind>,
    pub params: AttackParams,
}

impl Default for AttackSettings {
    fn default() -> Self {
        Self {
            catalog: AttackKind::ALL.to_vec(),
            params: AttackParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DefenseSettings {
    pub shadows: usize,
    pub shadow_training: TrainConfig,
    pub svm: SvmParams,
}

impl Default for DefenseSettings {
    fn default() -> Self {
        Self {
            shadows: 100,
            shadow_training: TrainConfig {
                epochs: 100,
                batch_size: 32,
                learning_rate: 0.01,
            },
            svm: SvmParams::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fraction_ok = |f: f64| (0.0..=1.0).contains(&f);
        if !fraction_ok(self.byz_fraction) {
            return Err(Error::Config(format!(
                "byz_fraction must lie in [0, 1], got {}",
                self.byz_fraction
            )));
        }
        if let Some(&bad) = self.sweep_byz_fractions.iter().find(|&&f| !fraction_ok(f)) {
            return Err(Error::Config(format!("sweep fraction {bad} outside [0, 1]")));
        }
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        if self.partition.clients == 0 {
            return Err(Error::Config("need at least one client".into()));
        }
        if self.partition.mode == PartitionMode::Dirichlet && !(self.partition.alpha > 0.0) {
            return Err(Error::Config(format!(
                "Dirichlet alpha must be positive, got {}",
                self.partition.alpha
            )));
        }
        if !(self.public.seed_fraction > 0.0 && self.public.seed_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "seed_fraction must lie in (0, 1], got {}",
                self.public.seed_fraction
            )));
        }
        if self.public.replication == 0 {
            return Err(Error::Config("replication must be at least 1".into()));
        }
        for t in [&self.training, &self.defense.shadow_training] {
            if t.epochs == 0 || t.batch_size == 0 || !(t.learning_rate >= 0.0) {
                return Err(Error::Config(format!("invalid training settings {t:?}")));
            }
        }
        if self.attacks.catalog.is_empty() && self.byz_fraction > 0.0 {
            return Err(Error::Config("attack catalog is empty but byz_fraction > 0".into()));
        }
        self.attacks.params.validate()
    }

    /// Byzantine client count: `round(byz_fraction * clients)`.
    pub fn byzantine_count(&self) -> usize {
        (self.byz_fraction * self.partition.clients as f64).round() as usize
    }

    /// The `f` passed to Bulyan and LFR.
    pub fn f(&self) -> usize {
        self.f_estimate.unwrap_or_else(|| self.byzantine_count())
    }

    pub fn shadow_config(&self) -> ShadowConfig {
        ShadowConfig {
            count: self.defense.shadows,
            train: self.defense.shadow_training,
            catalog: self.attacks.catalog.clone(),
            attack_params: self.attacks.params,
            svm: self.defense.svm,
        }
    }
}
