//! Round-synchronous federation: client updates, server aggregation and the
//! experiment loop.
//!
//! Clients within a round are independent and run in parallel; the server
//! round is the barrier. All randomness is keyed by (seed, client, round), so
//! the thread count never changes results.

pub mod client;
pub mod config;
pub mod experiment;
pub mod server;

pub use client::{ClientReport, ClientState, TagEvent};
pub use config::{Ablation, DataConfig, FederationConfig, Mode, ModelConfig, PriorScope, ProtocolConfig, Recipe, TrainConfig};
pub use experiment::{run_experiment, DatasetBundle, Federation, RoundRecord, Stage};
pub use server::{fedavg_aggregate, Broadcast, ServerState};
