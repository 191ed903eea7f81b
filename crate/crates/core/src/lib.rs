//! Deterministic federated-learning simulator with a membership-inference
//! Byzantine filter.
//!
//! Clients train a small image classifier on their private shard plus a
//! public dataset, some of them attack, and the server combines the uploads
//! with one of several aggregation rules. The filter compares every upload's
//! confidences on the public dataset with a reference model's and lets a
//! linear SVM, trained offline on shadow models, decide who is admitted.
//!
//! Everything is seeded: the same configuration and seed reproduce every
//! model bit for bit, independent of the number of worker threads.

pub mod aggregation;
pub mod attacks;
pub mod data;
pub mod defense;
pub mod error;
pub mod nn;
pub mod rng;
pub mod sim;

pub use aggregation::Aggregate;
pub use attacks::{AttackKind, AttackParams};
pub use data::LabeledDataset;
pub use defense::{DefenseModel, Features, Identity, OfflineArtifacts};
pub use error::{Error, Result};
pub use nn::{ConfidenceMatrix, ModelArch, Network, ParamVector, Shape, TrainConfig};
pub use sim::{AggregatorKind, Experiment, ExperimentConfig, ExperimentReport, Role, RoundRecord};
