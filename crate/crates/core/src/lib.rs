//! Federated multi-label classification under task heterogeneity.
//!
//! Clients each annotate only a subset of the global label set. Training runs
//! in two stages: a warm-up with a logit-adjusted partial-class loss, then a
//! detection stage where class prototypes exchanged through the server are used
//! to permanently pseudo-label missing classes, with a frozen copy of the global
//! model acting as a consistency teacher for whatever stays unlabeled.
//!
//! Module map:
//!
//! - [`model`], [`loss`], [`optim`]: the classifier, its objectives and Adam.
//! - [`prototype`], [`difficulty`], [`ledger`]: missing-label detection.
//! - [`protocol`]: client/server rounds and the experiment driver.
//! - [`data`]: synthetic data, client shards and partial-label masks.
//! - [`metrics`]: BACC, AUC, mAP and pseudo-label audits.

pub mod data;
pub mod difficulty;
pub mod error;
pub mod ledger;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod protocol;
pub mod prototype;
pub mod rng;

pub use error::{FedError, Result};
