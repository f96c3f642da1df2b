//! Server-side aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::client::ClientReport;
use super::config::FederationConfig;
use crate::difficulty::{adaptive_thresholds, aggregate_global_difficulty, SelectionRatios};
use crate::error::{FedError, Result};
use crate::model::ModelParams;
use crate::prototype::{aggregate_global_prototypes, AnnotationDist, DualPrototype};

/// Sample-count weighted average of client models.
pub fn fedavg_aggregate(models: &[&ModelParams], sizes: &[usize]) -> Result<ModelParams> {
    let first = models
        .first()
        .ok_or_else(|| FedError::Protocol("no models to aggregate".into()))?;
    if models.len() != sizes.len() {
        return Err(FedError::Protocol(format!(
            "{} models but {} sizes",
            models.len(),
            sizes.len()
        )));
    }
    if sizes.contains(&0) {
        return Err(FedError::Domain("client with zero samples".into()));
    }
    if models.iter().any(|m| !m.same_shape(first)) {
        return Err(FedError::Dimension("client models differ in shape".into()));
    }
    let total: usize = sizes.iter().sum();
    let mut out = first.zeros_like();
    for (m, &n) in models.iter().zip(sizes) {
        out.scaled_add(n as f64 / total as f64, m);
    }
    Ok(out)
}

/// What clients download at the start of a detection round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Broadcast {
    pub params: ModelParams,
    pub prototypes: BTreeMap<usize, DualPrototype>,
    pub d_global: Vec<f64>,
    pub ratios: SelectionRatios,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerState {
    pub global: ModelParams,
    pub annotators: AnnotationDist,
    pub prototypes: BTreeMap<usize, DualPrototype>,
    pub d_global: Vec<f64>,
    pub ratios: SelectionRatios,
    /// Rounds aggregated so far.
    pub round: usize,
}

impl ServerState {
    pub fn new(global: ModelParams, annotators: AnnotationDist) -> Result<Self> {
        if let Some(c) = annotators.iter().position(Vec::is_empty) {
            return Err(FedError::Protocol(format!("class {c} has no annotating client")));
        }
        let classes = annotators.len();
        Ok(Self {
            global,
            annotators,
            prototypes: BTreeMap::new(),
            d_global: vec![0.0; classes],
            ratios: SelectionRatios::constant(classes, 0.0, 0.0),
            round: 0,
        })
    }

    pub fn broadcast(&self) -> Broadcast {
        Broadcast {
            params: self.global.clone(),
            prototypes: self.prototypes.clone(),
            d_global: self.d_global.clone(),
            ratios: self.ratios.clone(),
        }
    }

    /// Aggregate one round of client reports. `reports` must hold exactly one
    /// report per client id `0..clients`.
    pub fn server_round(&mut self, reports: &[ClientReport], cfg: &FederationConfig) -> Result<()> {
        let k = cfg.protocol.clients;
        if reports.len() != k || reports.iter().enumerate().any(|(i, r)| r.client != i) {
            let got: Vec<usize> = reports.iter().map(|r| r.client).collect();
            return Err(FedError::Protocol(format!(
                "expected reports from clients 0..{k} in order, got {got:?}"
            )));
        }
        let models: Vec<&ModelParams> = reports.iter().map(|r| &r.params).collect();
        let sizes: Vec<usize> = reports.iter().map(|r| r.samples).collect();
        self.global = fedavg_aggregate(&models, &sizes)?;
        self.round += 1;

        let with_calc = reports
            .iter()
            .all(|r| r.prototypes.is_some() && r.difficulty.is_some());
        if !with_calc {
            return Ok(());
        }
        let mut protos = BTreeMap::new();
        let mut degrees = BTreeMap::new();
        for r in reports {
            for (&c, p) in r.prototypes.as_ref().expect("checked") {
                protos.insert((r.client, c), p.clone());
            }
            for (&c, &d) in &r.difficulty.as_ref().expect("checked").local {
                degrees.insert((r.client, c), d);
            }
        }
        self.prototypes = aggregate_global_prototypes(&protos, &self.annotators)?;
        for (c, p) in &self.prototypes {
            if !p.is_complete() {
                tracing::warn!(class = c, "global prototype incomplete, class skipped for detection");
            }
        }
        self.d_global = aggregate_global_difficulty(&degrees, &sizes, &self.annotators)?;
        let p = &cfg.protocol;
        let ratios = if cfg.recipe().adaptive {
            adaptive_thresholds(&self.d_global, p.neg_ratio, p.pos_ratio)
        } else {
            SelectionRatios::constant(self.d_global.len(), p.neg_ratio, p.pos_ratio)
        };
        self.ratios = ratios.with_floor(p.tau_floor);
        Ok(())
    }
}
