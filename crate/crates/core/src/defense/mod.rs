//! Membership-inference Byzantine filter.
//!
//! Offline, the server trains shadow models on the public dataset (the seed
//! set replicated `d` times), some honestly and some under each known attack,
//! picks one honest shadow as the reference, and fits a linear SVM on the
//! `[MSE, TCD]` features of every shadow against the reference. Online, each
//! uploaded model's features are computed the same way and the SVM decides
//! whether it joins the round's average; if nobody passes, the client with
//! the smallest MSE is kept.

mod checkpoint;
mod features;
mod svm;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use features::{extract_features, Features};
pub use svm::{train_defense_svm, DefenseModel, SvmParams};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{AttackKind, AttackParams};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{ConfidenceMatrix, Network, ParamVector, TrainConfig};
use crate::rng::{derive_seed, rng_from_seed};

/// Identity label of a (shadow or client) model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Identity {
    Malicious = 0,
    Benign = 1,
}

impl Identity {
    /// `-1` for malicious, `+1` for benign.
    pub fn sign(self) -> f64 {
        match self {
            Identity::Malicious => -1.0,
            Identity::Benign => 1.0,
        }
    }
}

/// One row of the defense training set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureSample {
    pub x: Features,
    pub y: Identity,
}

#[derive(Debug, Clone)]
pub struct ShadowModel {
    pub params: ParamVector,
    pub identity: Identity,
    /// The simulated attack for malicious shadows.
    pub attack: Option<AttackKind>,
}

#[derive(Debug, Clone)]
pub struct ShadowSet {
    pub models: Vec<ShadowModel>,
    /// Index of the benign shadow used as reference model.
    pub reference_index: usize,
}

impl ShadowSet {
    pub fn reference(&self) -> &ParamVector {
        &self.models[self.reference_index].params
    }
}

/// How the offline phase builds its shadows and trains the SVM.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowConfig {
    pub count: usize,
    pub train: TrainConfig,
    pub catalog: Vec<AttackKind>,
    pub attack_params: AttackParams,
    pub svm: SvmParams,
}

/// Trains `cfg.count` shadow models on `pub_ds`.
///
/// The first `ceil(k / 2)` shadows are benign; the remaining `floor(k / 2)`
/// cycle through the attack catalog so every kind appears at least once.
/// Every shadow starts from its own random initialization. Data attacks
/// poison a copy of `pub_ds` before training, model attacks transform the
/// trained parameters. The reference is a uniformly random benign shadow.
pub fn build_shadow_set(net: &Network, pub_ds: &LabeledDataset, cfg: &ShadowConfig, seed: u64) -> Result<ShadowSet> {
    let k = cfg.count;
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 shadow models, got {k}")));
    }
    if cfg.catalog.is_empty() {
        return Err(Error::Config("shadow attack catalog is empty".into()));
    }
    let benign = k.div_ceil(2);
    let malicious = k - benign;
    if malicious < cfg.catalog.len() {
        return Err(Error::Config(format!(
            "{malicious} malicious shadows cannot cover {} attack kinds",
            cfg.catalog.len()
        )));
    }
    cfg.attack_params.validate()?;

    let plan: Vec<Option<AttackKind>> = (0..k)
        .map(|s| (s >= benign).then(|| cfg.catalog[(s - benign) % cfg.catalog.len()]))
        .collect();
    let models = plan
        .par_iter()
        .enumerate()
        .map(|(s, attack)| {
            let init = net.init(derive_seed(seed, &[s as u64, 0]));
            let train_seed = derive_seed(seed, &[s as u64, 1]);
            let attack_seed = derive_seed(seed, &[s as u64, 2]);
            let params = match attack {
                None => net.train_local(&init, pub_ds, &cfg.train, train_seed)?,
                Some(kind) if kind.is_data_attack() => {
                    let poisoned = cfg.attack_params.poison_data(*kind, pub_ds, attack_seed)?;
                    net.train_local(&init, &poisoned, &cfg.train, train_seed)?
                }
                Some(kind) => {
                    let trained = net.train_local(&init, pub_ds, &cfg.train, train_seed)?;
                    cfg.attack_params.poison_model(*kind, &trained, attack_seed)?
                }
            };
            Ok(ShadowModel {
                params,
                identity: if attack.is_some() {
                    Identity::Malicious
                } else {
                    Identity::Benign
                },
                attack: *attack,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rng = rng_from_seed(derive_seed(seed, &[u64::MAX]));
    let reference_index = rng.random_range(0..benign);
    Ok(ShadowSet {
        models,
        reference_index,
    })
}

/// Everything the online phase needs from the offline phase.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineArtifacts {
    pub reference: ParamVector,
    pub reference_index: usize,
    pub defense: DefenseModel,
    /// The defense training set, one row per shadow.
    pub samples: Vec<FeatureSample>,
    /// Attack simulated by each shadow row, `None` for benign ones.
    pub sample_attacks: Vec<Option<AttackKind>>,
    /// [`LabeledDataset::fingerprint`] of the public dataset used.
    pub pub_fingerprint: u64,
}

/// Features of every shadow against the reference.
pub fn shadow_features(net: &Network, pub_ds: &LabeledDataset, shadows: &ShadowSet) -> Result<Vec<FeatureSample>> {
    let c_ref = net.forward(shadows.reference(), &pub_ds.as_batch())?;
    shadows
        .models
        .par_iter()
        .map(|m| {
            let c = net.forward(&m.params, &pub_ds.as_batch())?;
            Ok(FeatureSample {
                x: extract_features(&c, &c_ref, pub_ds.labels())?,
                y: m.identity,
            })
        })
        .collect()
}

/// Builds shadows, extracts the defense training set and trains the SVM.
pub fn run_offline(
    net: &Network,
    pub_ds: &LabeledDataset,
    cfg: &ShadowConfig,
    seed: u64,
) -> Result<(ShadowSet, OfflineArtifacts)> {
    let shadows = build_shadow_set(net, pub_ds, cfg, derive_seed(seed, &[0]))?;
    let samples = shadow_features(net, pub_ds, &shadows)?;
    let defense = train_defense_svm(&samples, &cfg.svm, derive_seed(seed, &[1]))?;
    let artifacts = OfflineArtifacts {
        reference: shadows.reference().clone(),
        reference_index: shadows.reference_index,
        defense,
        sample_attacks: shadows.models.iter().map(|m| m.attack).collect(),
        samples,
        pub_fingerprint: pub_ds.fingerprint(),
    };
    Ok((shadows, artifacts))
}

/// Classification of one uploaded model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    pub identity: Identity,
    pub features: Features,
    pub decision: f64,
}

/// Result of filtering one round of uploads.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    /// Indices admitted to aggregation, ascending; never empty.
    pub selected: Vec<usize>,
    pub verdicts: Vec<Verdict>,
    /// True when every client was classified malicious and the minimum-MSE
    /// client was admitted instead.
    pub fallback: bool,
}

/// Online-phase filter: the public dataset, the reference model's
/// confidences on it, and the trained defense model.
#[derive(Debug, Clone)]
pub struct Guard<'a> {
    net: &'a Network,
    pub_ds: &'a LabeledDataset,
    reference_conf: ConfidenceMatrix,
    defense: DefenseModel,
}

impl<'a> Guard<'a> {
    pub fn new(net: &'a Network, pub_ds: &'a LabeledDataset, reference: &ParamVector, defense: DefenseModel) -> Result<Self> {
        let reference_conf = net.forward(reference, &pub_ds.as_batch())?;
        Ok(Self {
            net,
            pub_ds,
            reference_conf,
            defense,
        })
    }

    pub fn from_artifacts(net: &'a Network, pub_ds: &'a LabeledDataset, art: &OfflineArtifacts) -> Result<Self> {
        if pub_ds.fingerprint() != art.pub_fingerprint {
            return Err(Error::Config(
                "public dataset differs from the one the defense was trained on".into(),
            ));
        }
        Self::new(net, pub_ds, &art.reference, art.defense.clone())
    }

    pub fn defense(&self) -> &DefenseModel {
        &self.defense
    }

    /// Features of `client` against the reference and the SVM's verdict.
    pub fn classify_client(&self, client: &ParamVector) -> Result<Verdict> {
        let conf = self.net.forward(client, &self.pub_ds.as_batch())?;
        let features = extract_features(&conf, &self.reference_conf, self.pub_ds.labels())?;
        Ok(Verdict {
            identity: self.defense.classify(features),
            features,
            decision: self.defense.decision(features),
        })
    }

    /// Admits every client classified benign, or the lowest-MSE client
    /// (lowest index on ties, NaN last) when none is.
    pub fn filter_round(&self, clients: &[ParamVector]) -> Result<FilterOutcome> {
        if clients.is_empty() {
            return Err(Error::Data("no client models to filter".into()));
        }
        let verdicts = clients
            .par_iter()
            .map(|c| self.classify_client(c))
            .collect::<Result<Vec<_>>>()?;
        let mut selected: Vec<usize> = (0..clients.len())
            .filter(|&i| verdicts[i].identity == Identity::Benign)
            .collect();
        let fallback = selected.is_empty();
        if fallback {
            let key = |i: usize| {
                let m = verdicts[i].features.mse;
                if m.is_nan() { f64::INFINITY } else { m }
            };
            let best = (0..clients.len())
                .min_by(|&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)))
                .unwrap();
            selected.push(best);
        }
        Ok(FilterOutcome {
            selected,
            verdicts,
            fallback,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::sign_flip;
    use crate::data::{replicate, synth_dataset, SynthSpec};
    use crate::nn::{ModelArch, Shape};

    fn setup() -> (Network, LabeledDataset) {
        let spec = SynthSpec::new(3, 1, Shape::new(1, 6, 6));
        let seed_ds = synth_dataset(&spec, 5).unwrap();
        let pub_ds = replicate(&seed_ds, 20).unwrap();
        let net = Network::new(ModelArch::mlp(Shape::new(1, 6, 6), &[8], 3).unwrap());
        (net, pub_ds)
    }

    fn shadow_cfg(count: usize, catalog: Vec<AttackKind>) -> ShadowConfig {
        ShadowConfig {
            count,
            train: TrainConfig {
                epochs: 5,
                batch_size: 8,
                learning_rate: 0.1,
            },
            catalog,
            attack_params: AttackParams::default(),
            svm: SvmParams::default(),
        }
    }

    #[test]
    fn minimum_shadow_set() {
        let (net, pub_ds) = setup();
        let set = build_shadow_set(&net, &pub_ds, &shadow_cfg(2, vec![AttackKind::SignFlip]), 1).unwrap();
        assert_eq!(set.models.len(), 2);
        assert_eq!(set.models[0].identity, Identity::Benign);
        assert_eq!(set.models[1].attack, Some(AttackKind::SignFlip));
        assert_eq!(set.reference_index, 0);
    }

    #[test]
    fn shadow_split_covers_catalog_and_is_deterministic() {
        let (net, pub_ds) = setup();
        let cfg = shadow_cfg(15, AttackKind::ALL.to_vec());
        let a = build_shadow_set(&net, &pub_ds, &cfg, 9).unwrap();
        let benign = a.models.iter().filter(|m| m.identity == Identity::Benign).count();
        assert_eq!(benign, 8);
        for kind in AttackKind::ALL {
            assert!(a.models.iter().any(|m| m.attack == Some(kind)));
        }
        assert_eq!(a.models[a.reference_index].identity, Identity::Benign);
        let b = build_shadow_set(&net, &pub_ds, &cfg, 9).unwrap();
        assert_eq!(a.reference_index, b.reference_index);
        for (x, y) in a.models.iter().zip(&b.models) {
            assert_eq!(x.params, y.params);
        }
    }

    #[test]
    fn shadow_config_errors() {
        let (net, pub_ds) = setup();
        assert!(matches!(
            build_shadow_set(&net, &pub_ds, &shadow_cfg(1, vec![AttackKind::Lie]), 0),
            Err(Error::Config(_))
        ));
        assert!(build_shadow_set(&net, &pub_ds, &shadow_cfg(4, vec![]), 0).is_err());
        assert!(build_shadow_set(&net, &pub_ds, &shadow_cfg(4, AttackKind::ALL.to_vec()), 0).is_err());
    }

    #[test]
    fn filter_falls_back_to_min_mse() {
        let (net, pub_ds) = setup();
        let reference = net.init(3);
        // a defense model that rejects everything
        let reject_all = DefenseModel {
            w: [0.0, 0.0],
            b: -1.0,
            mean: [0.0; 2],
            scale: [1.0; 2],
            params: SvmParams::default(),
        };
        let guard = Guard::new(&net, &pub_ds, &reference, reject_all).unwrap();
        let clients = vec![sign_flip(&reference), net.init(4), reference.clone()];
        let out = guard.filter_round(&clients).unwrap();
        assert!(out.fallback);
        assert_eq!(out.selected, vec![2]);

        let accept_all = DefenseModel {
            b: 1.0,
            ..guard.defense().clone()
        };
        let guard = Guard::new(&net, &pub_ds, &reference, accept_all).unwrap();
        let out = guard.filter_round(&clients).unwrap();
        assert_eq!(out.selected, vec![0, 1, 2]);
        assert!(!out.fallback);
        assert_eq!(out.verdicts[2].features, Features::default());
    }
}
