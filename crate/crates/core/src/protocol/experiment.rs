//! End-to-end experiment driver: data, clients, server, rounds, evaluation.

use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::client::{ClientReport, ClientState, TagEvent};
use super::config::FederationConfig;
use super::server::ServerState;
use crate::data::{build_mask_plan, generate_dataset, partition_clients, Dataset, MaskPlan};
use crate::error::{FedError, Result};
use crate::loss::{adjust_probs, ClassPriors};
use crate::metrics::{evaluate, pseudo_label_audit, AuditReport, EvalReport};
use crate::model::{forward, ModelParams};
use crate::rng::{stream, Domain};

/// Training and test data plus the partial-annotation plan.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub train: Dataset,
    pub test: Dataset,
    pub plan: MaskPlan,
}

impl DatasetBundle {
    pub fn generate(cfg: &FederationConfig) -> Result<Self> {
        cfg.validate()?;
        let (train, test) = generate_dataset(&cfg.synthetic_spec())?;
        let plan = build_mask_plan(
            cfg.protocol.clients,
            cfg.data.classes,
            cfg.data.missing_per_client,
            cfg.seed,
        )?;
        Ok(Self { train, test, plan })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Warmup,
    Detection,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Warmup => "warmup",
            Stage::Detection => "detection",
        }
    }
}

/// Outcome of one communication round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub stage: Stage,
    /// Test metrics of the aggregated model, on evaluation rounds only.
    pub eval: Option<EvalReport>,
    /// Tagged share of all missing-class entries, in `[0, 1]`.
    pub coverage: f64,
    /// Tag precision against ground truth over all tags so far.
    pub tag_precision: Option<f64>,
    pub tags_total: usize,
    pub new_tags: usize,
    pub d_global: Vec<f64>,
    pub clients_reported: usize,
    pub mean_loss: f64,
    pub wall_ms: u128,
}

/// A federation in progress; drive it with [`Federation::step`].
pub struct Federation {
    pub cfg: FederationConfig,
    pub clients: Vec<ClientState>,
    pub server: ServerState,
    pub test: Dataset,
    pub plan: MaskPlan,
    /// Ground-truth positive rates of the pooled training set.
    pub train_rates: Vec<f64>,
    /// Tags assigned in the most recent round.
    pub last_tags: Vec<TagEvent>,
    round: usize,
}

impl Federation {
    pub fn new(cfg: FederationConfig, bundle: &DatasetBundle) -> Result<Self> {
        cfg.validate()?;
        let k = cfg.protocol.clients;
        if bundle.plan.clients() != k {
            return Err(FedError::Config(format!(
                "mask plan covers {} clients, config has {k}",
                bundle.plan.clients()
            )));
        }
        if bundle.train.labels.ncols() != cfg.data.classes
            || bundle.train.inputs.ncols() != cfg.data.input_dim
        {
            return Err(FedError::Dimension("dataset does not match config shape".into()));
        }
        let mut init_rng = stream(cfg.seed, Domain::ModelInit, 0, 0);
        let init = ModelParams::init(cfg.data.input_dim, cfg.model.hidden, cfg.data.classes, &mut init_rng);
        let shards = partition_clients(bundle.train.len(), k)?;
        let clients: Vec<ClientState> = shards
            .into_iter()
            .enumerate()
            .map(|(id, rows)| {
                ClientState::new(id, bundle.train.slice(rows), bundle.plan.missing[id].clone(), &init, &cfg)
            })
            .collect();
        let n = bundle.train.len() as f64;
        let train_rates = bundle
            .train
            .labels
            .columns()
            .into_iter()
            .map(|c| c.sum() / n)
            .collect();
        let server = ServerState::new(init, bundle.plan.annotators.clone())?;
        Ok(Self {
            cfg,
            clients,
            server,
            test: bundle.test.clone(),
            plan: bundle.plan.clone(),
            train_rates,
            last_tags: Vec::new(),
            round: 0,
        })
    }

    /// Rounds completed so far.
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn is_finished(&self) -> bool {
        self.round >= self.cfg.protocol.rounds
    }

    pub fn is_eval_round(&self, round: usize) -> bool {
        let p = &self.cfg.protocol;
        round == p.rounds || (round < p.rounds && (round - 1).is_multiple_of(p.eval_interval))
    }

    /// Run one communication round (local updates, then aggregation).
    pub fn step(&mut self) -> Result<RoundRecord> {
        if self.is_finished() {
            return Err(FedError::Protocol("all rounds already completed".into()));
        }
        let started = Instant::now();
        let t = self.round + 1;
        let recipe = self.cfg.recipe();
        let stage = if recipe.detection && t > self.cfg.protocol.warmup_rounds {
            Stage::Detection
        } else {
            Stage::Warmup
        };
        let cfg = &self.cfg;
        let rates = Some(self.train_rates.as_slice());
        let reports: Vec<ClientReport> = match stage {
            Stage::Warmup => {
                let global = &self.server.global;
                self.clients
                    .par_iter_mut()
                    .map(|c| {
                        c.local_train_warmup(global, cfg, t, rates)
                            .map_err(|e| e.with_context(t, c.id))
                    })
                    .collect::<Result<_>>()?
            }
            Stage::Detection => {
                let broadcast = self.server.broadcast();
                self.clients
                    .par_iter_mut()
                    .map(|c| {
                        c.local_train_detection(&broadcast, cfg, t, rates)
                            .map_err(|e| e.with_context(t, c.id))
                    })
                    .collect::<Result<_>>()?
            }
        };
        self.server.server_round(&reports, cfg)?;
        self.round = t;
        self.last_tags = reports.iter().flat_map(|r| r.tags.iter().copied()).collect();

        let eval = if self.is_eval_round(t) {
            Some(self.evaluate()?)
        } else {
            None
        };
        let audit = self.audit()?;
        let mean_loss = reports.iter().map(|r| r.mean_loss).sum::<f64>() / reports.len() as f64;
        let record = RoundRecord {
            round: t,
            stage,
            eval,
            coverage: audit.coverage,
            tag_precision: audit.precision(),
            tags_total: audit.tagged,
            new_tags: self.last_tags.len(),
            d_global: self.server.d_global.clone(),
            clients_reported: reports.len(),
            mean_loss,
            wall_ms: started.elapsed().as_millis(),
        };
        if let Some(e) = &record.eval {
            tracing::info!(
                round = t,
                stage = stage.as_str(),
                bacc = e.bacc,
                auc = e.auc,
                map = e.map,
                coverage = record.coverage,
                "evaluated"
            );
        }
        Ok(record)
    }

    /// Test-set probabilities of the global model.
    pub fn global_probs(&self) -> Result<Array2<f64>> {
        let probs = forward(&self.server.global, self.test.inputs.view())?.probs;
        if self.cfg.protocol.eval_adjusted {
            let counts: Vec<(usize, usize)> = self
                .train_rates
                .iter()
                .map(|r| ((r * 1e6).round() as usize, 1_000_000))
                .collect();
            let priors = ClassPriors::from_counts(&counts, self.cfg.train.la_tau);
            return adjust_probs(probs.view(), &priors);
        }
        Ok(probs)
    }

    pub fn evaluate(&self) -> Result<EvalReport> {
        let probs = self.global_probs()?;
        evaluate(probs.view(), self.test.labels.view(), self.cfg.protocol.threshold)
    }

    pub fn audit(&self) -> Result<AuditReport> {
        pseudo_label_audit(self.clients.iter().map(|c| (&c.ledger, c.data.labels.view())))
    }

    pub fn run(mut self) -> Result<Vec<RoundRecord>> {
        let mut out = Vec::with_capacity(self.cfg.protocol.rounds);
        while !self.is_finished() {
            out.push(self.step()?);
        }
        Ok(out)
    }
}

/// Execute every round of `cfg` on `bundle` and return the per-round history.
pub fn run_experiment(cfg: &FederationConfig, bundle: &DatasetBundle) -> Result<Vec<RoundRecord>> {
    Federation::new(cfg.clone(), bundle)?.run()
}
