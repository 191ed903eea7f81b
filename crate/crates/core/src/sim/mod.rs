//! Experiment orchestration: role assignment, the round loop, metrics and
//! CSV persistence.
//!
//! Randomness is split by counter-based seed derivation from the master seed:
//! partitioning, seed-set sampling, roles, the initial model and the offline
//! phase each get their own stream, and round `r` gives client `i` the seeds
//! `derive(derive(master, [ROUND, r]), [i, purpose])`. Client results depend
//! only on these seeds, never on thread scheduling.

mod config;
mod report;

pub use config::{
    AttackSettings, DatasetSpec, DefenseSettings, ExperimentConfig, ModelSpec, PartitionSettings, PublicSettings,
};
pub use report::{csv_header, CsvReport};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{bulyan, coordinate_median, fedavg, fltrust, lfr};
use crate::attacks::AttackKind;
use crate::data::{partition, replicate, sample_seed, LabeledDataset, PartitionConfig};
use crate::defense::{run_offline, Guard, OfflineArtifacts};
use crate::error::{Error, Result};
use crate::nn::{Network, ParamVector};
use crate::rng::{derive_seed, rng_from_seed, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    Fedavg,
    Median,
    Bulyan,
    Lfr,
    Fltrust,
    #[serde(rename = "fedguard")]
    FedGuard,
}

impl AggregatorKind {
    pub const ALL: [AggregatorKind; 6] = [
        AggregatorKind::Fedavg,
        AggregatorKind::Median,
        AggregatorKind::Bulyan,
        AggregatorKind::Lfr,
        AggregatorKind::Fltrust,
        AggregatorKind::FedGuard,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AggregatorKind::Fedavg => "fedavg",
            AggregatorKind::Median => "median",
            AggregatorKind::Bulyan => "bulyan",
            AggregatorKind::Lfr => "lfr",
            AggregatorKind::Fltrust => "fltrust",
            AggregatorKind::FedGuard => "fedguard",
        }
    }

    /// Whether the rule picks a subset of clients. For the others every
    /// Byzantine update counts as mistakenly selected.
    pub fn selects(self) -> bool {
        !matches!(self, AggregatorKind::Fedavg | AggregatorKind::Median)
    }
}

impl fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AggregatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown aggregator `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Benign,
    Byzantine(AttackKind),
}

impl Role {
    pub fn attack(self) -> Option<AttackKind> {
        match self {
            Role::Benign => None,
            Role::Byzantine(kind) => Some(kind),
        }
    }
}

/// Assigns `round(byz_fraction * n)` random clients an attack each. With
/// fewer Byzantine clients than catalog entries the attacks are drawn without
/// repetition; otherwise every attack is used once and the rest are drawn
/// uniformly from the catalog.
pub fn assign_roles(n: usize, byz_fraction: f64, catalog: &[AttackKind], seed: u64) -> Result<Vec<Role>> {
    if n == 0 {
        return Err(Error::Config("need at least one client".into()));
    }
    if !(0.0..=1.0).contains(&byz_fraction) {
        return Err(Error::Config(format!("byz_fraction must lie in [0, 1], got {byz_fraction}")));
    }
    let byz = (byz_fraction * n as f64).round() as usize;
    if byz == 0 {
        return Ok(vec![Role::Benign; n]);
    }
    if catalog.is_empty() {
        return Err(Error::Config("attack catalog is empty".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut attacks = catalog.to_vec();
    attacks.shuffle(&mut rng);
    if byz < attacks.len() {
        attacks.truncate(byz);
    } else {
        while attacks.len() < byz {
            attacks.push(*catalog.choose(&mut rng).unwrap());
        }
        attacks.shuffle(&mut rng);
    }
    let mut clients: Vec<usize> = (0..n).collect();
    clients.shuffle(&mut rng);
    let mut roles = vec![Role::Benign; n];
    for (&c, &a) in clients.iter().zip(&attacks) {
        roles[c] = Role::Byzantine(a);
    }
    Ok(roles)
}

/// Outcome of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    /// Clients that influenced the new global model, ascending.
    pub selected: Vec<usize>,
    /// Byzantine clients taking part.
    pub n_b: usize,
    /// Byzantine clients mistakenly selected.
    pub n_m: usize,
    /// `n_m` broken down by [`AttackKind::index`].
    pub mistaken: [usize; 7],
    /// Test accuracy of the new global model.
    pub accuracy: f64,
    /// Clients whose uploaded model had non-finite parameters.
    pub non_finite: Vec<usize>,
    /// FedGuard only: nobody passed the filter and the minimum-MSE client
    /// was admitted.
    pub fallback: bool,
}

/// `(1 / R) * sum_r n_m / n_b` over the rounds with at least one Byzantine
/// client; 0 when there are none.
pub fn compute_aer(records: &[RoundRecord]) -> f64 {
    let ratios: Vec<f64> = records
        .iter()
        .filter(|r| r.n_b > 0)
        .map(|r| r.n_m as f64 / r.n_b as f64)
        .collect();
    if ratios.is_empty() {
        0.0
    } else {
        ratios.iter().sum::<f64>() / ratios.len() as f64
    }
}

/// All rounds of one run plus summary metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub aggregator: AggregatorKind,
    pub byz_fraction: f64,
    pub alpha: f64,
    pub roles: Vec<Role>,
    pub records: Vec<RoundRecord>,
    pub aer: f64,
    pub final_accuracy: f64,
    /// Mistaken selections per attack summed over all rounds.
    pub mistaken_totals: [usize; 7],
}

impl ExperimentReport {
    pub fn total_mistaken(&self) -> usize {
        self.mistaken_totals.iter().sum()
    }
}

/// Data, model and roles of an experiment, prepared once so several
/// aggregators can be run on identical inputs.
#[derive(Debug, Clone)]
pub struct Experiment {
    cfg: ExperimentConfig,
    net: Network,
    test: LabeledDataset,
    pub_ds: LabeledDataset,
    /// Server-held clean root set for FLTrust and LFR, the size of the seed
    /// set.
    root: LabeledDataset,
    /// `D_pub ∪ D_pri` per client.
    client_data: Vec<LabeledDataset>,
    roles: Vec<Role>,
    initial: ParamVector,
}

impl Experiment {
    pub fn prepare(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.rng_seed;
        let (train, test) = cfg.dataset.load(seed)?;
        let arch = cfg.model.build(train.shape(), train.class_count())?;
        let net = Network::new(arch);

        let seed_set = sample_seed(
            &train,
            cfg.public.seed_fraction,
            derive_seed(seed, &[stream::SEED_SAMPLE]),
        )?;
        let pub_ds = replicate(&seed_set, cfg.public.replication)?;
        let root = sample_seed(
            &train,
            cfg.public.seed_fraction,
            derive_seed(seed, &[stream::ROOT_SAMPLE]),
        )?;
        let parts = partition(
            &train,
            &PartitionConfig {
                mode: cfg.partition.mode,
                alpha: cfg.partition.alpha,
                clients: cfg.partition.clients,
                seed: derive_seed(seed, &[stream::PARTITION]),
            },
        )?;
        let client_data = parts
            .iter()
            .map(|p| pub_ds.concat(p))
            .collect::<Result<Vec<_>>>()?;
        let roles = assign_roles(
            cfg.partition.clients,
            cfg.byz_fraction,
            &cfg.attacks.catalog,
            derive_seed(seed, &[stream::ROLES]),
        )?;
        let initial = net.init(derive_seed(seed, &[stream::GLOBAL_INIT]));
        log::info!(
            "prepared {} clients, public set {} samples, test set {}, {} parameters",
            client_data.len(),
            pub_ds.len(),
            test.len(),
            net.param_count()
        );
        Ok(Self {
            cfg: cfg.clone(),
            net,
            test,
            pub_ds,
            root,
            client_data,
            roles,
            initial,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn public_dataset(&self) -> &LabeledDataset {
        &self.pub_ds
    }

    pub fn test_dataset(&self) -> &LabeledDataset {
        &self.test
    }

    pub fn client_data(&self) -> &[LabeledDataset] {
        &self.client_data
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn initial_model(&self) -> &ParamVector {
        &self.initial
    }

    pub fn set_aggregator(&mut self, kind: AggregatorKind) {
        self.cfg.aggregator = kind;
    }

    /// Changes the Byzantine fraction and redraws the roles.
    pub fn set_byz_fraction(&mut self, fraction: f64) -> Result<()> {
        self.roles = assign_roles(
            self.cfg.partition.clients,
            fraction,
            &self.cfg.attacks.catalog,
            derive_seed(self.cfg.rng_seed, &[stream::ROLES]),
        )?;
        self.cfg.byz_fraction = fraction;
        Ok(())
    }

    /// Runs the offline phase: shadow models, reference model and SVM.
    pub fn offline(&self) -> Result<OfflineArtifacts> {
        let seed = derive_seed(self.cfg.rng_seed, &[stream::SHADOWS]);
        let (_, art) = run_offline(&self.net, &self.pub_ds, &self.cfg.shadow_config(), seed)?;
        log::info!(
            "defense model trained: w = {:?}, b = {}, training accuracy {}",
            art.defense.w,
            art.defense.b,
            art.defense.accuracy(&art.samples)
        );
        Ok(art)
    }

    /// Uploaded model of every client for one round, before aggregation.
    pub fn client_updates(&self, global: &ParamVector, round_seed: u64) -> Result<Vec<ParamVector>> {
        let params = self.cfg.attacks.params;
        self.client_data
            .par_iter()
            .zip(&self.roles)
            .enumerate()
            .map(|(i, (data, role))| {
                let train_seed = derive_seed(round_seed, &[i as u64, 0]);
                let attack_seed = derive_seed(round_seed, &[i as u64, 1]);
                match role.attack() {
                    None => self.net.train_local(global, data, &self.cfg.training, train_seed),
                    Some(kind) if kind.is_data_attack() => {
                        let poisoned = params.poison_data(kind, data, attack_seed)?;
                        self.net.train_local(global, &poisoned, &self.cfg.training, train_seed)
                    }
                    Some(kind) => {
                        let trained = self.net.train_local(global, data, &self.cfg.training, train_seed)?;
                        params.poison_model(kind, &trained, attack_seed)
                    }
                }
            })
            .collect()
    }

    /// One round: local training, attacks, aggregation and evaluation.
    pub fn run_round(
        &self,
        round: usize,
        global: &ParamVector,
        guard: Option<&Guard<'_>>,
    ) -> Result<(ParamVector, RoundRecord)> {
        let round_seed = derive_seed(self.cfg.rng_seed, &[stream::ROUND, round as u64]);
        let updates = self.client_updates(global, round_seed)?;
        let non_finite: Vec<usize> = (0..updates.len()).filter(|&i| !updates[i].is_finite()).collect();
        if !non_finite.is_empty() {
            log::warn!("round {round}: clients {non_finite:?} uploaded non-finite parameters");
        }

        let n = updates.len();
        let f = self.cfg.f();
        let all: Vec<usize> = (0..n).collect();
        let mut fallback = false;
        let (model, selected) = match self.cfg.aggregator {
            AggregatorKind::Fedavg => (fedavg(&updates)?, all.clone()),
            AggregatorKind::Median => (coordinate_median(&updates)?, all.clone()),
            AggregatorKind::Bulyan => {
                let agg = bulyan(&updates, f)?;
                (agg.model, agg.selected)
            }
            AggregatorKind::Lfr => {
                let (agg, _) = lfr(&self.net, &updates, global, &self.root, f)?;
                (agg.model, agg.selected)
            }
            AggregatorKind::Fltrust => {
                let server_seed = derive_seed(round_seed, &[stream::SERVER]);
                let server = self.net.train_local(global, &self.root, &self.cfg.training, server_seed)?;
                let (agg, _) = fltrust(&updates, &server, global)?;
                (agg.model, agg.selected)
            }
            AggregatorKind::FedGuard => {
                let guard = guard.ok_or_else(|| Error::Config("fedguard needs offline artifacts".into()))?;
                let out = guard.filter_round(&updates)?;
                fallback = out.fallback;
                let chosen: Vec<ParamVector> = out.selected.iter().map(|&i| updates[i].clone()).collect();
                (fedavg(&chosen)?, out.selected)
            }
        };

        let n_b = self.roles.iter().filter(|r| r.attack().is_some()).count();
        let mut mistaken = [0usize; 7];
        let counted: &[usize] = if self.cfg.aggregator.selects() { &selected } else { &all };
        for &i in counted {
            if let Some(kind) = self.roles[i].attack() {
                mistaken[kind.index()] += 1;
            }
        }
        let accuracy = self.net.evaluate(&model, &self.test)?;
        let record = RoundRecord {
            round,
            selected,
            n_b,
            n_m: mistaken.iter().sum(),
            mistaken,
            accuracy,
            non_finite,
            fallback,
        };
        Ok((model, record))
    }

    /// Runs all rounds. FedGuard needs `artifacts` from [`offline`](Self::offline)
    /// built on the same public dataset. Each record is written to `sink`
    /// as soon as it is available.
    pub fn run(
        &self,
        artifacts: Option<&OfflineArtifacts>,
        mut sink: Option<&mut CsvReport>,
    ) -> Result<ExperimentReport> {
        let guard = match (self.cfg.aggregator, artifacts) {
            (AggregatorKind::FedGuard, Some(art)) => Some(Guard::from_artifacts(&self.net, &self.pub_ds, art)?),
            (AggregatorKind::FedGuard, None) => {
                return Err(Error::Config("fedguard needs offline artifacts".into()));
            }
            _ => None,
        };
        let mut global = self.initial.clone();
        let mut records = Vec::with_capacity(self.cfg.rounds);
        for round in 0..self.cfg.rounds {
            let (next, record) = self.run_round(round, &global, guard.as_ref())?;
            log::info!(
                "{} round {round}: accuracy {:.4}, selected {:?}, n_m {}/{}",
                self.cfg.aggregator,
                record.accuracy,
                record.selected,
                record.n_m,
                record.n_b
            );
            if let Some(sink) = sink.as_deref_mut() {
                sink.write_round(&record)?;
            }
            records.push(record);
            global = next;
        }
        let mut mistaken_totals = [0usize; 7];
        for r in &records {
            for (t, m) in mistaken_totals.iter_mut().zip(r.mistaken) {
                *t += m;
            }
        }
        let report = ExperimentReport {
            aggregator: self.cfg.aggregator,
            byz_fraction: self.cfg.byz_fraction,
            alpha: self.cfg.partition.effective_alpha(),
            roles: self.roles.clone(),
            aer: compute_aer(&records),
            final_accuracy: records.last().map_or(0.0, |r| r.accuracy),
            mistaken_totals,
            records,
        };
        if let Some(sink) = sink {
            sink.write_summary(&report)?;
        }
        Ok(report)
    }
}

/// File name of a run's CSV: `<aggregator>_byz<fraction>_alpha<alpha>.csv`.
pub fn csv_file_name(aggregator: AggregatorKind, byz_fraction: f64, alpha: f64) -> String {
    format!("{aggregator}_byz{byz_fraction}_alpha{alpha}.csv")
}

/// Prepares and runs one experiment, writing its CSV into `out_dir`.
/// `artifacts` are computed when the aggregator is FedGuard and none are
/// given.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    artifacts: Option<&OfflineArtifacts>,
    out_dir: &Path,
) -> Result<ExperimentReport> {
    let exp = Experiment::prepare(cfg)?;
    let owned;
    let artifacts = match (cfg.aggregator, artifacts) {
        (AggregatorKind::FedGuard, None) => {
            owned = exp.offline()?;
            Some(&owned)
        }
        (_, a) => a,
    };
    let alpha = cfg.partition.effective_alpha();
    let path = out_dir.join(csv_file_name(cfg.aggregator, cfg.byz_fraction, alpha));
    let mut csv = CsvReport::create(&path, cfg.aggregator, cfg.byz_fraction, alpha)?;
    exp.run(artifacts, Some(&mut csv))
}

/// Runs the configured aggregator once per fraction in
/// `cfg.sweep_byz_fractions`, one CSV each. The offline phase does not
/// depend on the fraction and is computed at most once.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    artifacts: Option<&OfflineArtifacts>,
    out_dir: &Path,
) -> Result<Vec<ExperimentReport>> {
    let mut exp = Experiment::prepare(cfg)?;
    let owned;
    let artifacts = match (cfg.aggregator, artifacts) {
        (AggregatorKind::FedGuard, None) => {
            owned = exp.offline()?;
            Some(&owned)
        }
        (_, a) => a,
    };
    let alpha = cfg.partition.effective_alpha();
    let mut reports = Vec::with_capacity(cfg.sweep_byz_fractions.len());
    for &fraction in &cfg.sweep_byz_fractions {
        exp.set_byz_fraction(fraction)?;
        let path = out_dir.join(csv_file_name(cfg.aggregator, fraction, alpha));
        let mut csv = CsvReport::create(&path, cfg.aggregator, fraction, alpha)?;
        reports.push(exp.run(artifacts, Some(&mut csv))?);
    }
    Ok(reports)
}
