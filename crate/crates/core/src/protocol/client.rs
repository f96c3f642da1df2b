//! Client-side state and local training for both stages.

use std::collections::BTreeMap;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;

use super::config::{FederationConfig, PriorScope, Recipe};
use super::server::Broadcast;
use crate::data::{apply_mask, augment_two_views, compute_class_priors, Dataset, ObservedLabels};
use crate::difficulty::{compute_local_difficulty, DifficultyReport};
use crate::error::{FedError, Result};
use crate::ledger::PseudoLabelLedger;
use crate::loss::{mse_consistency_loss, wpc_loss, ClassPriors};
use crate::model::{backward, features, forward, ModelParams};
use crate::optim::{step_in_place, OptimizerState};
use crate::prototype::{compute_local_prototypes, confidence_scores, select_pseudo_labels, DualPrototype};
use crate::rng::{stream, Domain};

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub id: usize,
    /// Local samples with ground truth; truth for missing classes is never
    /// read by training, only by audits.
    pub data: Dataset,
    pub observed: ObservedLabels,
    /// Annotated classes (AC).
    pub active: Vec<usize>,
    /// Classes without annotations here (NC).
    pub missing: Vec<usize>,
    pub params: ModelParams,
    pub ledger: PseudoLabelLedger,
    pub optimizer: OptimizerState,
    pub priors: ClassPriors,
}

/// A pseudo label assigned during one round, with the score that earned it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TagEvent {
    pub client: usize,
    pub sample: usize,
    pub class: usize,
    pub value: u8,
    pub score: f64,
    pub round: usize,
}

/// Everything a client uploads at the end of a round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientReport {
    pub client: usize,
    pub samples: usize,
    pub params: ModelParams,
    /// Local prototypes of active classes, when computed this round.
    pub prototypes: Option<BTreeMap<usize, DualPrototype>>,
    pub difficulty: Option<DifficultyReport>,
    pub tags: Vec<TagEvent>,
    pub mean_loss: f64,
}

impl ClientState {
    pub fn new(
        id: usize,
        data: Dataset,
        missing: Vec<usize>,
        init: &ModelParams,
        cfg: &FederationConfig,
    ) -> Self {
        let classes = data.labels.ncols();
        let observed = apply_mask(data.labels.view(), &missing);
        let active = (0..classes).filter(|c| !missing.contains(c)).collect();
        let ledger = PseudoLabelLedger::new(data.len(), classes, &missing);
        let optimizer = OptimizerState::new(init, cfg.train.lr, cfg.train.weight_decay);
        Self {
            id,
            observed,
            active,
            missing,
            params: init.clone(),
            ledger,
            optimizer,
            priors: ClassPriors::balanced(classes),
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Labels and loss mask for the partial-class loss: known labels plus
    /// permanent pseudo labels, or missing-as-negative over everything.
    pub fn supervision(&self, recipe: &Recipe) -> (Array2<f64>, Array2<f64>) {
        if !recipe.partial_labels {
            let mask = Array2::ones(self.observed.missing_as_negative.dim());
            return (self.observed.missing_as_negative.clone(), mask);
        }
        let mut labels = self.observed.missing_as_negative.clone();
        let mut mask = self.observed.active_mask.clone();
        for (i, c, tag) in self.ledger.iter_tags() {
            labels[[i, c]] = f64::from(tag.value);
            mask[[i, c]] = 1.0;
        }
        (labels, mask)
    }

    /// Untagged missing-class entries, the targets of the consistency term.
    pub fn uncertain_mask(&self) -> Array2<f64> {
        let mut m = Array2::zeros(self.observed.active_mask.dim());
        for &c in &self.missing {
            for i in self.ledger.residual(c) {
                m[[i, c]] = 1.0;
            }
        }
        m
    }

    fn refresh_priors(&mut self, cfg: &FederationConfig, global_rates: Option<&[f64]>) {
        let recipe = cfg.recipe();
        let classes = self.data.labels.ncols();
        self.priors = if !recipe.logit_adjust {
            ClassPriors::balanced(classes)
        } else if let (PriorScope::GlobalOracle, Some(rates)) = (cfg.protocol.priors, global_rates) {
            let counts: Vec<(usize, usize)> = rates
                .iter()
                .map(|r| ((r * 1e6).round() as usize, 1_000_000))
                .collect();
            ClassPriors::from_counts(&counts, cfg.train.la_tau)
        } else {
            compute_class_priors(
                self.data.labels.view(),
                self.observed.active_mask.view(),
                Some(&self.ledger),
                cfg.train.la_tau,
            )
        };
    }

    /// Stage 1: start from the global model and train on the partial-class
    /// objective over both augmented views.
    pub fn local_train_warmup(
        &mut self,
        global: &ModelParams,
        cfg: &FederationConfig,
        round: usize,
        global_rates: Option<&[f64]>,
    ) -> Result<ClientReport> {
        self.params = global.clone();
        self.refresh_priors(cfg, global_rates);
        let mean_loss = self.train_epochs(None, cfg, round)?;
        let local_calc = cfg.recipe().detection && round == cfg.protocol.warmup_rounds;
        self.report(cfg, mean_loss, Vec::new(), local_calc)
    }

    /// Stage 2: tag confident missing labels against the global prototypes,
    /// then train on hard labels plus consistency to the frozen global model.
    pub fn local_train_detection(
        &mut self,
        broadcast: &Broadcast,
        cfg: &FederationConfig,
        round: usize,
        global_rates: Option<&[f64]>,
    ) -> Result<ClientReport> {
        self.params = broadcast.params.clone();
        let tags = self.detect_missing_labels(broadcast, cfg, round)?;
        self.refresh_priors(cfg, global_rates);
        let teacher = cfg.recipe().consistency.then_some(&broadcast.params);
        let mean_loss = self.train_epochs(teacher, cfg, round)?;
        self.report(cfg, mean_loss, tags, true)
    }

    /// Score residual missing-class entries with the current (downloaded)
    /// model and tag the selected ones permanently.
    pub fn detect_missing_labels(
        &mut self,
        broadcast: &Broadcast,
        cfg: &FederationConfig,
        round: usize,
    ) -> Result<Vec<TagEvent>> {
        let feats = features(&self.params, self.data.inputs.view())?;
        let scores = confidence_scores(feats.view(), &broadcast.prototypes, &self.missing)?;
        let mut events = Vec::new();
        for (&class, z) in &scores {
            let candidates: Vec<(usize, f64)> = self
                .ledger
                .residual(class)
                .into_iter()
                .filter_map(|i| z[i].map(|s| (i, s)))
                .collect();
            if candidates.is_empty() {
                continue;
            }
            let sel = select_pseudo_labels(
                &candidates,
                broadcast.ratios.tau0[class],
                broadcast.ratios.tau1[class],
                cfg.protocol.min_tags,
            )?;
            for (value, ids) in [(0u8, &sel.tagged0), (1u8, &sel.tagged1)] {
                for &i in ids {
                    self.ledger.tag(i, class, value, round)?;
                    events.push(TagEvent {
                        client: self.id,
                        sample: i,
                        class,
                        value,
                        score: z[i].expect("selected entries have scores"),
                        round,
                    });
                }
            }
        }
        Ok(events)
    }

    fn report(
        &self,
        cfg: &FederationConfig,
        mean_loss: f64,
        tags: Vec<TagEvent>,
        local_calc: bool,
    ) -> Result<ClientReport> {
        let (prototypes, difficulty) = if local_calc {
            let (p, d) = self.local_calculation(cfg)?;
            (Some(p), Some(d))
        } else {
            (None, None)
        };
        Ok(ClientReport {
            client: self.id,
            samples: self.len(),
            params: self.params.clone(),
            prototypes,
            difficulty,
            tags,
            mean_loss,
        })
    }

    /// Prototypes and learning degrees of the active classes under the
    /// freshly trained local model.
    pub fn local_calculation(
        &self,
        cfg: &FederationConfig,
    ) -> Result<(BTreeMap<usize, DualPrototype>, DifficultyReport)> {
        let out = forward(&self.params, self.data.inputs.view())?;
        let protos = compute_local_prototypes(out.features.view(), self.data.labels.view(), &self.active)?;
        let diff = compute_local_difficulty(
            out.probs.view(),
            &self.active,
            cfg.protocol.band_low,
            cfg.protocol.band_high,
        )?;
        Ok((protos, diff))
    }

    /// `local_epochs` passes over both augmented views. Returns the mean batch loss.
    fn train_epochs(
        &mut self,
        teacher: Option<&ModelParams>,
        cfg: &FederationConfig,
        round: usize,
    ) -> Result<f64> {
        let recipe = cfg.recipe();
        let t = &cfg.train;
        let n = self.len();
        let (labels, mask) = self.supervision(&recipe);
        let uncertain = teacher.map(|_| self.uncertain_mask());
        let labels2 = concatenate(Axis(0), &[labels.view(), labels.view()]).expect("same width");
        let mask2 = concatenate(Axis(0), &[mask.view(), mask.view()]).expect("same width");
        let uncertain2 = uncertain
            .as_ref()
            .map(|u| concatenate(Axis(0), &[u.view(), u.view()]).expect("same width"));

        self.optimizer = OptimizerState::new(&self.params, t.lr, t.weight_decay);
        let mut total = 0.0;
        let mut batches = 0usize;
        for epoch in 0..t.local_epochs {
            let key = (round * t.local_epochs + epoch) as u64;
            let mut aug_rng = stream(cfg.seed, Domain::Augment, self.id as u64, key);
            let (v1, v2) = augment_two_views(self.data.inputs.view(), t.aug_weak, t.aug_strong, &mut aug_rng)?;
            let teacher_probs = match teacher {
                Some(tp) => {
                    let p = forward(tp, v1.view())?.probs;
                    Some(concatenate(Axis(0), &[p.view(), p.view()]).expect("same width"))
                }
                None => None,
            };
            let inputs = concatenate(Axis(0), &[v1.view(), v2.view()]).expect("same width");
            let mut order: Vec<usize> = (0..2 * n).collect();
            order.shuffle(&mut stream(cfg.seed, Domain::Shuffle, self.id as u64, key));
            for chunk in order.chunks(t.batch_size) {
                let x = inputs.select(Axis(0), chunk);
                let y = labels2.select(Axis(0), chunk);
                let m = mask2.select(Axis(0), chunk);
                let teach = teacher_probs.as_ref().zip(uncertain2.as_ref()).map(|(tp, u)| {
                    (tp.select(Axis(0), chunk), u.select(Axis(0), chunk))
                });
                let loss = self.batch_step(x.view(), y.view(), m.view(), teach, cfg)?;
                total += loss;
                batches += 1;
            }
        }
        Ok(if batches == 0 { 0.0 } else { total / batches as f64 })
    }

    fn batch_step(
        &mut self,
        x: ArrayView2<f64>,
        y: ArrayView2<f64>,
        mask: ArrayView2<f64>,
        teacher: Option<(Array2<f64>, Array2<f64>)>,
        cfg: &FederationConfig,
    ) -> Result<f64> {
        let fwd = forward(&self.params, x)?;
        let hard = wpc_loss(fwd.probs.view(), y, mask, &self.priors, cfg.train.wpc_normalizer)?;
        let mut value = hard.value;
        let mut grad = hard.grad_logits;
        if let Some((tp, u)) = teacher {
            let soft = mse_consistency_loss(fwd.probs.view(), tp.view(), u.view())?;
            value += soft.value;
            grad += &soft.grad_logits;
        }
        if !value.is_finite() {
            return Err(FedError::Diverged(format!("non-finite loss {value}")));
        }
        let grads = backward(&self.params, x, &fwd, grad.view())?;
        step_in_place(&mut self.params, &grads, &mut self.optimizer)?;
        Ok(value)
    }
}
