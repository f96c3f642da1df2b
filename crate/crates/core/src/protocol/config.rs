use serde::{Deserialize, Serialize};

use crate::data::{uniform_correlation, SyntheticSpec};
use crate::error::{FedError, Result};
use crate::loss::WpcNormalizer;

/// Training recipe selected for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Plain BCE with missing labels read as negative.
    #[serde(alias = "FEDAVG")]
    Fedavg,
    /// Partial-class BCE on known labels only, no logit adjustment, no detection stage.
    #[serde(alias = "FEDAVG_PL")]
    FedavgPl,
    /// Warm-up plus missing-label detection, shaped by the ablation flags.
    #[serde(alias = "FEDMLP")]
    Fedmlp,
}

/// Component switches of the full method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    /// Missing-label detection: partial-class loss plus prototype pseudo-labels.
    pub mld: bool,
    /// Logit adjustment inside the partial-class loss.
    pub wpc: bool,
    /// MSE consistency to the global teacher on untagged missing classes.
    pub cr: bool,
    /// Selection ratios scaled by the global learning degree.
    pub st: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self::full()
    }
}

impl Ablation {
    pub fn full() -> Self {
        Self {
            mld: true,
            wpc: true,
            cr: true,
            st: true,
        }
    }

    pub fn none() -> Self {
        Self {
            mld: false,
            wpc: false,
            cr: false,
            st: false,
        }
    }

    /// The five cumulative component sets: none, +MLD, +WPC, +CR, +ST.
    pub fn cumulative() -> [(&'static str, Ablation); 5] {
        let mut a = Self::none();
        let mut rows = [("FedAvg", a); 5];
        a.mld = true;
        rows[1] = ("+MLD", a);
        a.wpc = true;
        rows[2] = ("+WPC", a);
        a.cr = true;
        rows[3] = ("+CR", a);
        a.st = true;
        rows[4] = ("+ST", a);
        rows
    }
}

/// What a run actually does, derived from mode and flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Recipe {
    /// Loss only over known (and pseudo-tagged) entries instead of missing-as-negative.
    pub partial_labels: bool,
    pub logit_adjust: bool,
    /// Prototype exchange and pseudo-labeling after warm-up.
    pub detection: bool,
    pub consistency: bool,
    pub adaptive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorScope {
    /// Each client estimates positive rates from its own supervised entries.
    #[default]
    Local,
    /// Ground-truth training-set rates, for diagnostics only.
    GlobalOracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub classes: usize,
    pub input_dim: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub positive_rates: Vec<f64>,
    /// Off-diagonal latent label correlation, used when `correlation` is unset.
    pub label_correlation: f64,
    pub correlation: Option<Vec<Vec<f64>>>,
    pub signal: f64,
    pub noise: f64,
    /// Classes each client lacks labels for.
    pub missing_per_client: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = SyntheticSpec::desk_default(0);
        Self {
            classes: s.classes,
            input_dim: s.input_dim,
            n_train: s.n_train,
            n_test: s.n_test,
            positive_rates: s.positive_rates,
            label_correlation: 0.2,
            correlation: None,
            signal: s.signal,
            noise: s.noise,
            missing_per_client: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub aug_weak: f64,
    pub aug_strong: f64,
    /// Exponent on the priors in the logit adjustment.
    pub la_tau: f64,
    pub wpc_normalizer: WpcNormalizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: DESK_LR,
            weight_decay: 5e-4,
            batch_size: 32,
            local_epochs: 1,
            aug_weak: 0.05,
            aug_strong: 0.2,
            la_tau: 1.0,
            wpc_normalizer: WpcNormalizer::Classes,
        }
    }
}

/// Learning rate of the reference recipe (pretrained CNN backbone).
pub const REFERENCE_LR: f64 = 3e-5;
/// Learning rate for the from-scratch perceptron at desk scale.
pub const DESK_LR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub clients: usize,
    pub warmup_rounds: usize,
    pub rounds: usize,
    /// Lower edge of the uncertainty band (L).
    pub band_low: f64,
    /// Upper edge of the uncertainty band (R).
    pub band_high: f64,
    /// Base negative selection ratio (T0), as a fraction.
    pub neg_ratio: f64,
    /// Base positive selection ratio (T1), as a fraction.
    pub pos_ratio: f64,
    /// Lower bound applied to every selection ratio; 0 disables it.
    pub tau_floor: f64,
    /// Minimum tags per side, class and round whenever the ratio is positive.
    pub min_tags: usize,
    pub eval_interval: usize,
    pub threshold: f64,
    /// Evaluate logit-adjusted instead of raw probabilities.
    pub eval_adjusted: bool,
    pub priors: PriorScope,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            clients: 5,
            warmup_rounds: 50,
            rounds: 200,
            band_low: 0.3,
            band_high: 0.7,
            neg_ratio: 0.005,
            pos_ratio: 0.01,
            tau_floor: 0.0,
            min_tags: 0,
            eval_interval: 5,
            threshold: 0.5,
            eval_adjusted: false,
            priors: PriorScope::Local,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationConfig {
    pub mode: Mode,
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub protocol: ProtocolConfig,
    pub ablation: Ablation,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Fedmlp,
            seed: 0,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            protocol: ProtocolConfig::default(),
            ablation: Ablation::full(),
        }
    }
}

impl FederationConfig {
    /// Reference round budget and learning rate instead of the desk-scale ones.
    pub fn reference() -> Self {
        let mut cfg = Self::default();
        cfg.protocol.rounds = 500;
        cfg.train.lr = REFERENCE_LR;
        cfg
    }

    pub fn recipe(&self) -> Recipe {
        match self.mode {
            Mode::Fedavg => Recipe {
                partial_labels: false,
                logit_adjust: false,
                detection: false,
                consistency: false,
                adaptive: false,
            },
            Mode::FedavgPl => Recipe {
                partial_labels: true,
                logit_adjust: false,
                detection: false,
                consistency: false,
                adaptive: false,
            },
            Mode::Fedmlp => {
                let a = self.ablation;
                let partial = a.mld || a.wpc;
                Recipe {
                    partial_labels: partial,
                    logit_adjust: a.wpc,
                    detection: a.mld,
                    // Untagged missing entries only exist when the loss is partial.
                    consistency: a.cr && partial,
                    adaptive: a.st,
                }
            }
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        let d = &self.data;
        SyntheticSpec {
            classes: d.classes,
            input_dim: d.input_dim,
            n_train: d.n_train,
            n_test: d.n_test,
            positive_rates: d.positive_rates.clone(),
            correlation: Some(
                d.correlation
                    .clone()
                    .unwrap_or_else(|| uniform_correlation(d.classes, d.label_correlation)),
            ),
            signal: d.signal,
            noise: d.noise,
            seed: self.seed,
        }
    }

    /// Check every cross-field constraint; messages name the offending key.
    pub fn validate(&self) -> Result<()> {
        let p = &self.protocol;
        let t = &self.train;
        let d = &self.data;
        let bad = |key: &str, msg: String| Err(FedError::Config(format!("{key}: {msg}")));
        if p.clients == 0 {
            return bad("protocol.clients", "must be at least 1".into());
        }
        if p.rounds == 0 {
            return bad("protocol.rounds", "must be at least 1".into());
        }
        if p.warmup_rounds == 0 || p.warmup_rounds > p.rounds {
            return bad(
                "protocol.warmup_rounds",
                format!("must satisfy 1 <= warmup_rounds <= rounds ({})", p.rounds),
            );
        }
        if !(0.0 <= p.band_low && p.band_low < p.band_high && p.band_high <= 1.0) {
            return bad(
                "protocol.band_low",
                format!("need 0 <= band_low < band_high <= 1, got {} and {}", p.band_low, p.band_high),
            );
        }
        for (key, v) in [
            ("protocol.neg_ratio", p.neg_ratio),
            ("protocol.pos_ratio", p.pos_ratio),
            ("protocol.tau_floor", p.tau_floor),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(key, format!("must be in [0, 1], got {v}"));
            }
        }
        if p.eval_interval == 0 {
            return bad("protocol.eval_interval", "must be at least 1".into());
        }
        if !(p.threshold > 0.0 && p.threshold < 1.0) {
            return bad("protocol.threshold", format!("must be in (0, 1), got {}", p.threshold));
        }
        if t.local_epochs == 0 {
            return bad("train.local_epochs", "must be at least 1".into());
        }
        if t.batch_size == 0 {
            return bad("train.batch_size", "must be at least 1".into());
        }
        if !(t.lr >= 0.0 && t.lr.is_finite()) {
            return bad("train.lr", format!("must be finite and non-negative, got {}", t.lr));
        }
        if !(t.weight_decay >= 0.0 && t.weight_decay.is_finite()) {
            return bad("train.weight_decay", "must be finite and non-negative".into());
        }
        if !(0.0 <= t.aug_weak && t.aug_weak <= t.aug_strong && t.aug_strong.is_finite()) {
            return bad("train.aug_weak", "need 0 <= aug_weak <= aug_strong".into());
        }
        if self.model.hidden == 0 {
            return bad("model.hidden", "must be at least 1".into());
        }
        if d.missing_per_client == 0 || d.missing_per_client >= d.classes {
            return bad(
                "data.missing_per_client",
                format!("must be in [1, {}]", d.classes.saturating_sub(1)),
            );
        }
        if p.clients * (d.classes - d.missing_per_client) < d.classes {
            return bad(
                "data.missing_per_client",
                format!(
                    "{} clients labeling {} classes each cannot cover {} classes",
                    p.clients,
                    d.classes - d.missing_per_client,
                    d.classes
                ),
            );
        }
        if p.clients > d.n_train {
            return bad("protocol.clients", format!("more clients than the {} training samples", d.n_train));
        }
        if !(-1.0..1.0).contains(&d.label_correlation) {
            return bad("data.label_correlation", "must be in [-1, 1)".into());
        }
        self.synthetic_spec()
            .validate()
            .map_err(|e| FedError::Config(format!("data: {e}")))
    }
}
