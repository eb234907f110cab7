//! Flat run configuration, read from and written as TOML.

use serde::{Deserialize, Serialize};

use crate::autodiff::OptimizerKind;
use crate::encoders::{Activation, EncoderKind, ModelSpec};
use crate::error::{Error, Result};
use crate::eval::ProbeConfig;
use crate::losses::{HarConfig, LossKind};

/// Which graph the fine-tuning step trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinetuneGraph {
    /// Induced subgraph on the unlabelled split, pseudo-labels only.
    Unlabelled,
    /// Induced subgraph on the whole train split, true plus pseudo-labels.
    Train,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset: String,
    pub encoder: EncoderKind,
    pub loss: LossKind,
    pub tau: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Class prior; `1 / num_classes` when absent.
    pub tau_plus: Option<f64>,
    pub exclude_intra_self: bool,
    pub per_row_minmax: bool,
    pub negatives_only_mean: bool,
    pub p_e: f64,
    pub p_f: f64,
    pub hidden_dim: usize,
    pub projector_dim: usize,
    pub activation: Activation,
    pub projector_activation: Activation,
    pub heads: usize,
    pub attention_slope: f64,
    pub bias: bool,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub optimizer: OptimizerKind,
    pub patience: usize,
    pub unlabelled_fraction: f64,
    pub seed: u64,
    /// Used only when the dataset ships no published split.
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub use_published_split: bool,
    pub finetune_graph: FinetuneGraph,
    /// Pre-training epochs at which to keep a checkpoint (0 = initialization).
    pub snapshot_epochs: Vec<usize>,
    pub probe_l2: f64,
    pub probe_max_iter: usize,
    pub probe_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dataset: "cora".into(),
            encoder: EncoderKind::Gcn,
            loss: LossKind::Har,
            tau: 0.4,
            alpha: 0.5,
            beta: 0.5,
            tau_plus: None,
            exclude_intra_self: false,
            per_row_minmax: false,
            negatives_only_mean: false,
            p_e: 0.2,
            p_f: 0.3,
            hidden_dim: 128,
            projector_dim: 128,
            activation: Activation::Relu,
            projector_activation: Activation::Elu,
            heads: 8,
            attention_slope: 0.2,
            bias: true,
            epochs: 300,
            learning_rate: 5e-4,
            weight_decay: 1e-5,
            optimizer: OptimizerKind::Adam,
            patience: 20,
            unlabelled_fraction: 0.0,
            seed: 0,
            train_fraction: 0.6,
            val_fraction: 0.2,
            use_published_split: true,
            finetune_graph: FinetuneGraph::Unlabelled,
            snapshot_epochs: Vec::new(),
            probe_l2: 1e-4,
            probe_max_iter: 500,
            probe_tol: 1e-6,
        }
    }
}

fn range_err(name: &str, range: &str, v: f64) -> Error {
    Error::Config(format!("{name} out of {range}: {v}"))
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    /// Replace top-level keys, then re-validate.
    pub fn with_overrides(&self, overrides: &[(String, toml::Value)]) -> Result<Self> {
        let mut table = toml::Table::try_from(self).expect("config is always representable");
        for (k, v) in overrides {
            table.insert(k.clone(), v.clone());
        }
        let cfg: TrainConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(range_err("tau", "(0,inf)", self.tau));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(range_err(name, "(0,1]", v));
            }
        }
        if let Some(tp) = self.tau_plus {
            if !(tp > 0.0 && tp < 1.0) {
                return Err(range_err("tau_plus", "(0,1)", tp));
            }
        }
        for (name, v) in [("p_e", self.p_e), ("p_f", self.p_f)] {
            if !(0.0..=0.4).contains(&v) {
                return Err(range_err(name, "[0,0.4]", v));
            }
        }
        if !(0.0..1.0).contains(&self.unlabelled_fraction) {
            return Err(range_err("unlabelled_fraction", "[0,1)", self.unlabelled_fraction));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(range_err("learning_rate", "(0,inf)", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(range_err("weight_decay", "[0,inf)", self.weight_decay));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if self.hidden_dim == 0 || self.projector_dim == 0 || self.heads == 0 {
            return Err(Error::Config("hidden_dim, projector_dim and heads must be >= 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(range_err("train_fraction", "(0,1)", self.train_fraction));
        }
        if !(0.0..1.0).contains(&self.val_fraction) || self.train_fraction + self.val_fraction > 1.0 {
            return Err(range_err("val_fraction", "[0,1-train_fraction]", self.val_fraction));
        }
        if !(self.probe_l2 >= 0.0 && self.probe_tol > 0.0 && self.probe_max_iter > 0) {
            return Err(Error::Config("probe settings must be l2 >= 0, tol > 0, max_iter > 0".into()));
        }
        Ok(())
    }

    pub fn probe(&self) -> ProbeConfig {
        ProbeConfig {
            l2: self.probe_l2,
            max_iter: self.probe_max_iter,
            tol: self.probe_tol,
        }
    }

    pub fn har(&self, num_classes: usize) -> HarConfig {
        let mut h = HarConfig::new(self.tau, self.alpha, self.beta, num_classes);
        if let Some(tp) = self.tau_plus {
            h.tau_plus = tp;
        }
        h.exclude_intra_self = self.exclude_intra_self;
        h.per_row_minmax = self.per_row_minmax;
        h.negatives_only_mean = self.negatives_only_mean;
        h
    }

    /// Architecture for a dataset. The supervised baseline uses the
    /// projector output as its `num_classes`-way classification head.
    pub fn model_spec(&self, input_dim: usize, num_classes: usize) -> ModelSpec {
        ModelSpec {
            encoder: self.encoder,
            input_dim,
            hidden_dim: self.hidden_dim,
            projector_dim: if self.loss == LossKind::Supervised {
                num_classes
            } else {
                self.projector_dim
            },
            activation: self.activation,
            projector_activation: self.projector_activation,
            heads: self.heads,
            attention_slope: self.attention_slope,
            bias: self.bias,
        }
    }

    /// Short tag used in reports, e.g. `sharp` or `grace`.
    pub fn model_name(&self) -> &'static str {
        match self.loss {
            LossKind::Har => "sharp",
            LossKind::Supervised => match self.encoder {
                EncoderKind::Gcn => "gcn",
                EncoderKind::Gat => "gat",
            },
            other => other.name(),
        }
    }
}
